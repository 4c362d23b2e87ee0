//! Cross-module checks on the public API: checkpoints, stream keys and the
//! channel's common random numbers.

use gsc_core::baseline::{ClassicalConfig, ClassicalLink, DeepJscc, DeepJsccConfig};
use gsc_core::codec::{CodecConfig, SwinJscc};
use gsc_core::diffusion::{SftConfig, SftModel, KIND_DIFFUSION, KIND_PRETRAINED};
use gsc_core::synth::synthetic_images;
use gsc_core::{ChannelConfig, ChannelKind, ChannelSignal, StreamKey};

fn bits(v: Vec<f32>) -> Vec<u32> {
    v.into_iter().map(f32::to_bits).collect()
}

#[test]
fn codec_checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let codec = SwinJscc::new(&CodecConfig::default().arch()).unwrap();
    let path = dir.path().join("codec.ckpt");
    codec.save(&path).unwrap();
    let loaded = SwinJscc::load(&path).unwrap();
    let images = synthetic_images(4, 32, 32, 2, 0).unwrap();
    let ch = ChannelConfig::new(ChannelKind::Rayleigh, 6.0, 9);
    let keys = StreamKey::range(0, 0, 4);
    let a = codec.transmit(&images, &ch, &keys).unwrap();
    let b = loaded.transmit(&images, &ch, &keys).unwrap();
    assert_eq!(bits(a.to_vec().unwrap()), bits(b.to_vec().unwrap()));

    // A flipped payload byte is caught by the integrity check.
    let mut raw = std::fs::read(&path).unwrap();
    let last = raw.len() - 1;
    raw[last] ^= 0x55;
    std::fs::write(&path, raw).unwrap();
    assert!(SwinJscc::load(&path).is_err());
}

#[test]
fn sft_checkpoint_kind_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let model = SftModel::new(&SftConfig::default().arch()).unwrap();
    let path = dir.path().join("sft.ckpt");
    model.save(KIND_DIFFUSION, &path).unwrap();
    assert!(SftModel::load(KIND_PRETRAINED, &path).is_err());
    let loaded = SftModel::load(KIND_DIFFUSION, &path).unwrap();
    let s_hat = synthetic_images(3, 32, 32, 4, 0).unwrap();
    let keys = StreamKey::range(1, 10, 3);
    let a = model.refine(&s_hat, 7, &keys).unwrap();
    let b = loaded.refine(&s_hat, 7, &keys).unwrap();
    assert_eq!(bits(a.to_vec().unwrap()), bits(b.to_vec().unwrap()));
}

#[test]
fn outputs_depend_on_stream_keys_not_batch_position() {
    let codec = SwinJscc::new(&CodecConfig::default().arch()).unwrap();
    let images = synthetic_images(4, 32, 32, 5, 0).unwrap();
    let ch = ChannelConfig::new(ChannelKind::Awgn, 3.0, 2);
    let whole = codec.transmit(&images, &ch, &StreamKey::range(0, 0, 4)).unwrap();
    let tail = codec.transmit(&images.slice(2, 2).unwrap(), &ch, &StreamKey::range(0, 2, 2)).unwrap();
    let a = whole.slice(2, 2).unwrap().to_vec().unwrap();
    let b = tail.to_vec().unwrap();
    // Batched kernels may differ in the last bits; the noise must not.
    let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
    assert!(worst < 1e-4, "{worst}");
    let other_user = codec.transmit(&images.slice(2, 2).unwrap(), &ch, &StreamKey::range(1, 2, 2)).unwrap();
    assert_ne!(bits(other_user.to_vec().unwrap()), bits(b));
}

#[test]
fn noise_scales_exactly_across_snr() {
    let f = ChannelSignal::new((0..512).map(|i| ((i * 37 % 11) as f64 - 5.0) / 4.0).collect()).unwrap();
    let f = gsc_core::channel::power_normalize(&f, 1.0).unwrap();
    let lo = ChannelConfig::new(ChannelKind::Rayleigh, 0.0, 4);
    let hi = lo.with_snr(10.0);
    let a = lo.transmit(&f, &[3, 1]).unwrap();
    let b = hi.transmit(&f, &[3, 1]).unwrap();
    let sig = lo.realize(f.complex_len(), &[3, 1]).apply(&f, 0.0).unwrap().received;
    // Same fading and unit noise; only the noise amplitude changes, by sqrt(10).
    for ((ya, yb), s) in a.received.as_slice().iter().zip(b.received.as_slice()).zip(sig.as_slice()) {
        let (na, nb) = (ya - s, yb - s);
        assert!((na - nb * 10f64.sqrt()).abs() < 1e-12);
    }
}

#[test]
fn baselines_are_deterministic() {
    let images = synthetic_images(2, 32, 32, 6, 0).unwrap();
    let ch = ChannelConfig::new(ChannelKind::Awgn, 12.0, 1);
    let keys = StreamKey::range(0, 0, 2);
    let link = ClassicalLink::new(&ClassicalConfig::default()).unwrap();
    for i in 0..2 {
        let a = link.transmit(&images, i, &ch, keys[i]).unwrap();
        let b = link.transmit(&images, i, &ch, keys[i]).unwrap();
        assert_eq!(a.status, b.status);
        let img = |o: &gsc_core::baseline::DecodeOutcome| o.image.as_ref().map(|t| bits(t.to_vec().unwrap()));
        assert_eq!(img(&a), img(&b));
    }

    let d = DeepJscc::new(&DeepJsccConfig::default().arch()).unwrap();
    let x = d.transmit(&images, &ch, &keys).unwrap();
    let y = d.transmit(&images, &ch, &keys).unwrap();
    assert_eq!(bits(x.to_vec().unwrap()), bits(y.to_vec().unwrap()));
}
