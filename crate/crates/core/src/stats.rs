//! Small numeric helpers shared across modules.

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Sample standard deviation (divisor n − 1); `None` below two values.
pub fn sample_sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

/// Sample variance (divisor n − 1); `None` below two values.
pub fn sample_variance(xs: &[f64]) -> Option<f64> {
    sample_sd(xs).map(|s| s * s)
}

/// Midpoint of the middle order statistics.
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() || xs.iter().any(|x| x.is_nan()) {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Rounds to `digits` significant digits.
pub fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let magnitude = x.abs().log10().floor() as i32;
    round_dp(x, digits - 1 - magnitude)
}

/// Rounds to `places` decimal places (negative values round to tens, ...).
pub fn round_dp(x: f64, places: i32) -> f64 {
    if !x.is_finite() {
        return x;
    }
    // Go through the decimal string so the result is the double nearest
    // the printed value.
    if places >= 0 {
        format!("{:.*}", places as usize, x).parse().unwrap_or(x)
    } else {
        let scale = 10f64.powi(-places);
        (x / scale).round() * scale
    }
}

/// Sizes of `k` contiguous groups over `n` items, differing by at most one.
/// Leftover items go to the extreme groups first (first, last, second,
/// second-to-last, ...), so 424 into 5 gives 85/85/84/85/85.
pub fn balanced_group_sizes(n: usize, k: usize) -> Vec<usize> {
    assert!(k > 0);
    let mut sizes = vec![n / k; k];
    let mut remainder = n % k;
    let (mut lo, mut hi) = (0usize, k - 1);
    let mut take_low = true;
    while remainder > 0 {
        if take_low {
            sizes[lo] += 1;
            lo += 1;
        } else {
            sizes[hi] += 1;
            hi = hi.saturating_sub(1);
        }
        take_low = !take_low;
        remainder -= 1;
    }
    sizes
}

/// Indices of `values` in ascending order; ties keep input order.
pub fn stable_argsort(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_sizes_match_published_partitions() {
        assert_eq!(balanced_group_sizes(424, 5), vec![85, 85, 84, 85, 85]);
        assert_eq!(balanced_group_sizes(637, 5), vec![128, 127, 127, 127, 128]);
        assert_eq!(balanced_group_sizes(10, 5), vec![2; 5]);
        assert_eq!(balanced_group_sizes(13, 10).iter().sum::<usize>(), 13);
    }

    #[test]
    fn median_and_sd() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[]), None);
        assert_eq!(sample_sd(&[1.0]), None);
        assert_eq!(sample_sd(&[2.0, 2.0, 2.0]), Some(0.0));
    }

    #[test]
    fn rounding() {
        assert_eq!(round_sig(0.978048780487, 6), 0.978049);
        assert_eq!(round_sig(12345.678, 6), 12345.7);
        assert_eq!(round_sig(-0.000123456789, 6), -0.000123457);
        assert_eq!(round_dp(40.082 / 41.0, 3), 0.978);
        assert_eq!(round_dp(123456.0, -2), 123500.0);
    }
}
