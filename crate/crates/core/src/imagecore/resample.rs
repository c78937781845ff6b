/// One output sample's interpolation along an axis: `(1-w)·src[i0] + w·src[i1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub i0: usize,
    pub i1: usize,
    pub w: f64,
}

/// Interpolation taps mapping an axis of length `in_len` onto `out_len`
/// samples, half-pixel-centered, clamped at the borders.
pub fn axis_taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    assert!(in_len > 0 && out_len > 0);
    if in_len == out_len {
        return (0..out_len).map(|i| Tap { i0: i, i1: i, w: 0.0 }).collect();
    }
    let scale = in_len as f64 / out_len as f64;
    let last = (in_len - 1) as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            Tap {
                i0,
                i1,
                w: src - i0 as f64,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halving_averages_pairs() {
        let taps = axis_taps(4, 2);
        assert_eq!(taps[0], Tap { i0: 0, i1: 1, w: 0.5 });
        assert_eq!(taps[1], Tap { i0: 2, i1: 3, w: 0.5 });
    }

    #[test]
    fn upsampling_clamps_at_edges() {
        let taps = axis_taps(2, 4);
        assert_eq!(taps[0], Tap { i0: 0, i1: 1, w: 0.0 });
        assert_eq!(taps[1], Tap { i0: 0, i1: 1, w: 0.25 });
        assert_eq!(taps[3].i0, 1);
    }
}
