use std::fs;
use std::time::Instant;

use flowzero_core::bench::{render_plan, BenchCase, Expectation};
use flowzero_core::bundle::{emit_bundle, load_bundle, BundleError, BundleParams, Dtype};
use flowzero_core::dss::DynamicSceneSyntax;
use flowzero_core::mns::{generate_noise_sequence, NoiseParams, NoiseTensor};
use flowzero_core::verify::MotionLabel;

fn scene(frames: usize) -> DynamicSceneSyntax {
    let case = BenchCase::new(
        "a horse running from right to left",
        Expectation::Movement {
            object: "horse".into(),
            label: MotionLabel::Left,
        },
        0,
    );
    render_plan(&case, frames, &[])
}

fn noises(dss: &DynamicSceneSyntax, params: &NoiseParams) -> Vec<NoiseTensor> {
    let base = NoiseTensor::gaussian(64, 64, 4, 42).unwrap();
    generate_noise_sequence(&base, &dss.motions(), params).unwrap()
}

#[test]
fn emit_then_load_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let dss = scene(8);
    let params = BundleParams::default();
    let tensors = noises(&dss, &params.noise);
    let start = Instant::now();
    let manifest = emit_bundle(&dss, &tensors, dir.path(), &params).unwrap();
    let loaded = load_bundle(dir.path()).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(loaded.dss, dss);
    assert_eq!(loaded.manifest, manifest);
    assert_eq!(loaded.noises.len(), 8);
    for (a, b) in tensors.iter().zip(&loaded.noises) {
        let bits = |t: &NoiseTensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
        assert_eq!(a.shape(), b.shape());
    }
    assert_eq!(manifest.latent_shape, [64, 64, 4]);
    assert_eq!(manifest.noise_paths[7], "noise/frame_007.fzt");
    assert!(elapsed.as_millis() < 1000, "{elapsed:?}");
}

#[test]
fn tensor_files_follow_the_documented_layout() {
    let dir = tempfile::tempdir().unwrap();
    let dss = scene(2);
    let params = BundleParams::default();
    let tensors = noises(&dss, &params.noise);
    emit_bundle(&dss, &tensors, dir.path(), &params).unwrap();
    let bytes = fs::read(dir.path().join("noise/frame_001.fzt")).unwrap();
    assert_eq!(&bytes[..4], b"FZT1");
    assert_eq!(bytes[4], 2, "f64 dtype code");
    assert_eq!(bytes[5], 3, "three dims");
    let dim = |i: usize| u64::from_le_bytes(bytes[6 + 8 * i..14 + 8 * i].try_into().unwrap());
    assert_eq!((dim(0), dim(1), dim(2)), (64, 64, 4));
    let payload = &bytes[30..];
    assert_eq!(payload.len(), 64 * 64 * 4 * 8);
    let first = f64::from_le_bytes(payload[..8].try_into().unwrap());
    assert_eq!(first.to_bits(), tensors[1].data()[0].to_bits());
}

#[test]
fn f32_bundles_round_to_single_precision() {
    let dir = tempfile::tempdir().unwrap();
    let dss = scene(3);
    let params = BundleParams {
        dtype: Dtype::F32,
        ..BundleParams::default()
    };
    let tensors = noises(&dss, &params.noise);
    emit_bundle(&dss, &tensors, dir.path(), &params).unwrap();
    let loaded = load_bundle(dir.path()).unwrap();
    for (a, b) in tensors.iter().zip(&loaded.noises) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(*y, *x as f32 as f64);
        }
    }
    let bytes = fs::read(dir.path().join("noise/frame_000.fzt")).unwrap();
    assert_eq!(bytes[4], 1);
    assert_eq!(bytes.len(), 30 + 64 * 64 * 4 * 4);
}

#[test]
fn tampering_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let dss = scene(4);
    let params = BundleParams::default();
    emit_bundle(&dss, &noises(&dss, &params.noise), dir.path(), &params).unwrap();

    let path = dir.path().join("noise/frame_002.fzt");
    let mut bytes = fs::read(&path).unwrap();
    bytes[100] ^= 0x01;
    fs::write(&path, &bytes).unwrap();
    match load_bundle(dir.path()) {
        Err(BundleError::Integrity { path, .. }) => assert_eq!(path, "noise/frame_002.fzt"),
        other => panic!("{other:?}"),
    }
    bytes[100] ^= 0x01;
    fs::write(&path, &bytes).unwrap();
    load_bundle(dir.path()).unwrap();

    let dss_path = dir.path().join("dss.json");
    let text = fs::read_to_string(&dss_path).unwrap();
    fs::write(&dss_path, text.replace("horse", "zebra")).unwrap();
    assert!(matches!(
        load_bundle(dir.path()),
        Err(BundleError::Integrity { .. })
    ));
}

#[test]
fn missing_files_and_arity_errors() {
    let dir = tempfile::tempdir().unwrap();
    let dss = scene(8);
    let params = BundleParams::default();
    let mut tensors = noises(&dss, &params.noise);
    tensors.pop();
    assert!(matches!(
        emit_bundle(&dss, &tensors, dir.path(), &params),
        Err(BundleError::Arity {
            frames: 8,
            noises: 7
        })
    ));
    assert!(matches!(
        load_bundle(dir.path()),
        Err(BundleError::Io { .. })
    ));
}

#[test]
fn manifests_are_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let dss = scene(5);
    let params = BundleParams::default();
    let tensors = noises(&dss, &params.noise);
    emit_bundle(&dss, &tensors, a.path(), &params).unwrap();
    emit_bundle(&dss, &tensors, b.path(), &params).unwrap();
    for rel in ["manifest.json", "dss.json", "noise/frame_004.fzt"] {
        assert_eq!(
            fs::read(a.path().join(rel)).unwrap(),
            fs::read(b.path().join(rel)).unwrap(),
            "{rel}"
        );
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["frames"][1]["direction"], "right");
}
