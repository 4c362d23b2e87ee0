//! Procedural image sets: smooth backgrounds with a few coloured shapes and
//! mild texture, so that codecs have edges, flat regions and colour to
//! work with.

use rand::Rng;

use crate::error::Result;
use crate::image::ImageTensor;
use crate::rng;

const TAG: u64 = 0x7379_6e74;

fn image_into(buf: &mut [f32], h: usize, w: usize, seed: u64, index: u64) {
    let mut r = rng::substream(seed, &[TAG, index]);
    let plane = h * w;
    let base: [f32; 3] = [r.random(), r.random(), r.random()];
    let tilt: [f32; 3] = [r.random_range(-0.4..0.4), r.random_range(-0.4..0.4), r.random_range(-0.4..0.4)];
    let angle: f32 = r.random_range(0.0..std::f32::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    for y in 0..h {
        for x in 0..w {
            let u = (x as f32 / w as f32 - 0.5) * ca + (y as f32 / h as f32 - 0.5) * sa;
            for c in 0..3 {
                buf[c * plane + y * w + x] = base[c] + tilt[c] * u;
            }
        }
    }
    let shapes = r.random_range(1..=4);
    for _ in 0..shapes {
        let color: [f32; 3] = [r.random(), r.random(), r.random()];
        let cx = r.random_range(0.0..w as f32);
        let cy = r.random_range(0.0..h as f32);
        let size = r.random_range(0.12..0.4) * h.min(w) as f32;
        let round = r.random_bool(0.5);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
                let inside = if round {
                    dx * dx + dy * dy <= size * size
                } else {
                    dx.abs() <= size && dy.abs() <= 0.6 * size
                };
                if inside {
                    for c in 0..3 {
                        buf[c * plane + y * w + x] = color[c];
                    }
                }
            }
        }
    }
    let freq: f32 = r.random_range(0.3..1.2);
    let amp: f32 = r.random_range(0.0..0.08);
    let phase: f32 = r.random_range(0.0..std::f32::consts::TAU);
    for y in 0..h {
        for x in 0..w {
            let t = amp * ((x as f32 * freq + phase).sin() * (y as f32 * freq * 0.7).cos());
            for c in 0..3 {
                let v = &mut buf[c * plane + y * w + x];
                *v = (*v + t).clamp(0.0, 1.0);
            }
        }
    }
}

/// `n` images of size `h x w`; image `i` depends only on `(seed, first + i)`.
pub fn synthetic_images(n: usize, h: usize, w: usize, seed: u64, first: u64) -> Result<ImageTensor> {
    let per = 3 * h * w;
    let mut data = vec![0f32; n * per];
    for (i, chunk) in data.chunks_mut(per).enumerate() {
        image_into(chunk, h, w, seed, first + i as u64);
    }
    ImageTensor::from_vec(data, n, h, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_index_addressed() {
        let a = synthetic_images(4, 32, 32, 9, 0).unwrap();
        let b = synthetic_images(2, 32, 32, 9, 2).unwrap();
        let a = a.to_vec().unwrap();
        assert_eq!(&a[2 * 3072..], b.to_vec().unwrap().as_slice());
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
