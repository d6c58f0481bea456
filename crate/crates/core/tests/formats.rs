mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};

use common::*;
use lrd_core::bench::{MachineInfo, ModeReport, ModeRow};
use lrd_core::checkpoint::{decode, encode, read_checkpoint, write_checkpoint};
use lrd_core::compress::{compress, verify, CompressOptions, CompressSummary, VerifyOptions, VerifyReport};
use lrd_core::init::random_checkpoint;
use lrd_core::json::{from_json_str, to_json_string};
use lrd_core::rank::RankMethod;
use lrd_core::{
    build_resnet, plan_ranks, ArchDescriptor, CompressionConfig, CompressionMode, ErrorCategory, HooiOptions,
    RankPlan, TensorMap,
};
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn json_round_trip<T: Serialize + DeserializeOwned + PartialEq + std::fmt::Debug>(v: &T) {
    let text = to_json_string(v).unwrap();
    let (back, warnings): (T, _) = from_json_str(&text, true).unwrap();
    assert!(warnings.is_empty());
    assert_eq!(&back, v);
    assert_eq!(to_json_string(&back).unwrap(), text);
}

fn small_model() -> (ArchDescriptor, TensorMap) {
    let arch = build_resnet(18, 32).unwrap();
    let ckpt = random_checkpoint(&arch, 17);
    (arch, ckpt)
}

#[test]
fn checkpoint_bytes_round_trip() {
    let (_, ckpt) = small_model();
    let bytes = encode(&ckpt).unwrap();
    let back = decode(&bytes).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(encode(&back).unwrap(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.lrdc");
    write_checkpoint(&path, &ckpt).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(read_checkpoint(&path).unwrap(), ckpt);
}

#[test]
fn every_json_schema_round_trips() {
    let (arch, ckpt) = small_model();
    json_round_trip(&arch);
    for mode in CompressionMode::BUILT_IN {
        let cfg = CompressionConfig { mode: mode.clone(), ..Default::default() };
        json_round_trip(&cfg);
        json_round_trip(&plan_ranks(&arch, &cfg, None).unwrap());
    }
    let vb = CompressionConfig {
        method: RankMethod::Vbmf { weakening: 0.3 },
        mode: CompressionMode::Custom {
            include: vec!["block4.*".into()],
            exclude: vec!["*.downsample".into()],
        },
        ..Default::default()
    };
    json_round_trip(&plan_ranks(&arch, &vb, Some(&ckpt)).unwrap());

    let cfg = CompressionConfig { mode: CompressionMode::Mode1, ..Default::default() };
    let plan = plan_ranks(&arch, &cfg, None).unwrap();
    let opts = CompressOptions { hooi: HooiOptions { max_iters: 2, tol: 1e-6 }, ..Default::default() };
    let out = compress(&arch, &ckpt, &plan, &opts).unwrap();
    json_round_trip::<CompressSummary>(&out.summary);
    json_round_trip(&out.arch);
    let rep: VerifyReport = verify(&arch, &ckpt, &out.arch, &out.checkpoint, &VerifyOptions::default()).unwrap();
    json_round_trip(&rep);

    json_round_trip(&ModeReport {
        machine_info: MachineInfo::current(),
        input_shape: vec![1, 3, 224, 224],
        rows: vec![ModeRow {
            mode: "mode3".into(),
            params_after: 13_000_000,
            macs_after: 2_000_000_000,
            total_time_ns: 123_456_789,
            speedup_vs_original: 1.0 / 3.0,
        }],
    });
}

#[test]
fn lenient_json_drops_unknown_fields() {
    let arch = build_resnet(18, 32).unwrap();
    let plan = RankPlan::identity(&arch).unwrap();
    let mut v: serde_json::Value = serde_json::to_value(&plan).unwrap();
    v["extra"] = serde_json::json!(1);
    v["config"]["also_extra"] = serde_json::json!("x");
    let text = v.to_string();
    let (back, warnings): (RankPlan, _) = from_json_str(&text, false).unwrap();
    assert_eq!(back, plan);
    assert_eq!(warnings.len(), 2);
    let err = from_json_str::<RankPlan>(&text, true).unwrap_err();
    assert_eq!(err.category(), ErrorCategory::Data);
}

fn mutate(bytes: &[u8], r: &mut impl Rng) -> Vec<u8> {
    let mut b = bytes.to_vec();
    match r.random_range(0..6) {
        0 => {
            let i = r.random_range(0..b.len());
            b[i] ^= 1 << r.random_range(0..8);
        }
        1 => {
            let i = r.random_range(0..b.len());
            b[i] = r.random();
        }
        2 => b.truncate(r.random_range(0..b.len())),
        3 => {
            let i = r.random_range(0..=b.len());
            let n = r.random_range(1..16);
            let junk: Vec<u8> = (0..n).map(|_| r.random()).collect();
            b.splice(i..i, junk);
        }
        4 => {
            // header and the first record's length fields are the interesting targets
            let i = r.random_range(0..b.len().min(64));
            b[i] = r.random();
        }
        _ => {
            let i = r.random_range(0..b.len());
            let j = r.random_range(i..b.len().min(i + 32));
            b.drain(i..j.max(i + 1).min(b.len()));
        }
    }
    b
}

#[test]
fn checkpoint_fuzz_never_panics() {
    let mut ckpt = TensorMap::new();
    let mut r = rng(99);
    for (i, shape) in [vec![4, 3, 3, 3], vec![10, 4], vec![7], vec![2, 2, 1, 1]].into_iter().enumerate() {
        let n = shape.iter().product();
        ckpt.insert(format!("layer{i}.weight"), lrd_core::Tensor::new(shape, normal(1, n, &mut r)).unwrap());
    }
    let bytes = encode(&ckpt).unwrap();
    let (mut ok, mut err) = (0, 0);
    for _ in 0..1000 {
        let m = mutate(&bytes, &mut r);
        match catch_unwind(AssertUnwindSafe(|| decode(&m))).expect("decoder panicked") {
            Ok(map) => {
                ok += 1;
                assert_eq!(decode(&encode(&map).unwrap()).unwrap(), map);
            }
            Err(e) => {
                err += 1;
                assert_eq!(e.category(), ErrorCategory::Data, "{e}");
                assert!(!e.to_string().is_empty());
            }
        }
    }
    assert_eq!(ok + err, 1000);
    assert!(err > 500, "only {err} mutations were rejected");
}

#[test]
fn json_fuzz_never_panics() {
    let arch = build_resnet(18, 32).unwrap();
    let text = to_json_string(&plan_ranks(&arch, &CompressionConfig::default(), None).unwrap()).unwrap();
    let mut r = rng(7);
    for _ in 0..1000 {
        let m = mutate(text.as_bytes(), &mut r);
        let s = String::from_utf8_lossy(&m);
        match catch_unwind(AssertUnwindSafe(|| from_json_str::<RankPlan>(&s, true))).expect("parser panicked") {
            Ok(_) => {}
            Err(e) => assert_eq!(e.category(), ErrorCategory::Data, "{e}"),
        }
    }
}
