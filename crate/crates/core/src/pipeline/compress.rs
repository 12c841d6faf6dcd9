use crate::error::{invalid, Result};
use crate::par;
use crate::volume::CostVolume;

/// Compresses a concatenation volume `[left; right]` to one channel by
/// projecting the right half onto the RMS-normalized left half:
/// `<v_l, v_r> / (C * rms(v_l))`.
///
/// For a slice filtered by weight `a >= 0` this is `a` times the feature
/// correlation normalized by the left feature RMS. A zero left half gives 0.
pub fn concat_projection(v: &CostVolume) -> Result<CostVolume> {
    if v.channels % 2 != 0 || v.channels == 0 {
        return Err(invalid(format!("concatenation volume needs an even channel count, got {}", v.channels)));
    }
    let c = v.channels / 2;
    let n = v.disparities * v.height * v.width;
    let chunk = (v.height * v.width).max(1);
    let mut data = vec![0.0f32; n];
    par::for_each_chunk(&mut data, chunk, |i, out| {
        let base = i * chunk;
        for (j, o) in out.iter_mut().enumerate() {
            let (mut dot, mut ss) = (0.0f64, 0.0f64);
            for ch in 0..c {
                let l = v.data[ch * n + base + j] as f64;
                let r = v.data[(c + ch) * n + base + j] as f64;
                dot += l * r;
                ss += l * l;
            }
            *o = if ss > 0.0 { (dot / (c as f64 * (ss / c as f64).sqrt())) as f32 } else { 0.0 };
        }
    });
    Ok(CostVolume { channels: 1, disparities: v.disparities, height: v.height, width: v.width, data, scale: v.scale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn projection_of_scaled_matching_halves() {
        // left = right = a * (+-1 pattern): projection is a
        let pattern = [1.0f32, -1.0, 1.0, 1.0];
        let a = [0.5f32, 2.0];
        let v = CostVolume::from_fn(8, 2, 1, 1, |ch, d, _, _| a[d] * pattern[ch % 4]).unwrap();
        let p = concat_projection(&v).unwrap();
        assert!((p.data()[0] - 0.5).abs() < 1e-6);
        assert!((p.data()[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn zero_left_half_and_odd_channels() {
        let v = CostVolume::from_fn(4, 1, 1, 1, |ch, _, _, _| if ch < 2 { 0.0 } else { 1.0 }).unwrap();
        assert_eq!(concat_projection(&v).unwrap().data(), &[0.0]);
        assert!(concat_projection(&SeededRng::new(1).volume(3, 1, 2, 2)).is_err());
    }

    #[test]
    fn matches_direct_formula() {
        let v = SeededRng::new(2).volume(6, 3, 2, 4);
        let p = concat_projection(&v).unwrap();
        for d in 0..3 {
            for y in 0..2 {
                for x in 0..4 {
                    let l: Vec<f64> = (0..3).map(|c| v.get(c, d, y, x) as f64).collect();
                    let r: Vec<f64> = (3..6).map(|c| v.get(c, d, y, x) as f64).collect();
                    let dot: f64 = l.iter().zip(&r).map(|(a, b)| a * b).sum();
                    let rms = (l.iter().map(|a| a * a).sum::<f64>() / 3.0).sqrt();
                    assert!((p.get(0, d, y, x) as f64 - dot / (3.0 * rms)).abs() < 1e-6);
                }
            }
        }
    }
}
