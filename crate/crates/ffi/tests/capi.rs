use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use metaworld::metatrain::{TrainConfig, TrainState};
use metaworld_ffi::*;

fn last_error() -> String {
    let p = mw_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn simulator_round_trip() {
    let sim = mw_sim_new(7);
    let mut buf = [0u8; MW_FRAME_PIXELS];
    unsafe {
        assert_eq!(
            mw_sim_render(sim, buf.as_mut_ptr(), buf.len()),
            MwStatus::Ok
        );
        assert_eq!(buf.iter().map(|&b| b as u32).sum::<u32>(), 36);
        assert_eq!(mw_sim_step(sim, 2), MwStatus::Ok);
        assert_eq!(mw_sim_step(sim, 6), MwStatus::InvalidArgument);
        assert!(last_error().contains("action"));
        assert_eq!(
            mw_sim_render(sim, buf.as_mut_ptr(), 100),
            MwStatus::InvalidArgument
        );
        mw_sim_free(sim);
        assert_eq!(mw_sim_step(ptr::null_mut(), 0), MwStatus::NullPointer);
        mw_sim_free(ptr::null_mut());
    }
}

#[test]
fn transform_is_an_involution() {
    let sim = mw_sim_new(3);
    let mut f = [0u8; MW_FRAME_PIXELS];
    let mut g = [0u8; MW_FRAME_PIXELS];
    let mut h = [0u8; MW_FRAME_PIXELS];
    unsafe {
        mw_sim_render(sim, f.as_mut_ptr(), f.len());
        for kind in 0..6 {
            assert_eq!(
                mw_transform(kind, f.as_ptr(), g.as_mut_ptr(), f.len()),
                MwStatus::Ok
            );
            assert_eq!(
                mw_transform(kind, g.as_ptr(), h.as_mut_ptr(), f.len()),
                MwStatus::Ok
            );
            assert_eq!(f, h, "kind {kind}");
        }
        assert_eq!(
            mw_transform(6, f.as_ptr(), g.as_mut_ptr(), f.len()),
            MwStatus::InvalidArgument
        );
        mw_sim_free(sim);
    }
}

#[test]
fn dataset_generate_save_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("d.mwd").to_str().unwrap()).unwrap();
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(mw_dataset_generate(3, 12, 5, &mut ds), MwStatus::Ok);
        assert_eq!(mw_dataset_len(ds), 3);
        assert_eq!(mw_dataset_save(ds, path.as_ptr()), MwStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(mw_dataset_load(path.as_ptr(), &mut back), MwStatus::Ok);
        let mut n = 0usize;
        assert_eq!(mw_dataset_episode_len(back, 2, &mut n), MwStatus::Ok);
        assert_eq!(n, 12);
        let (mut a, mut b) = ([0u8; MW_FRAME_PIXELS], [0u8; MW_FRAME_PIXELS]);
        mw_dataset_frame(ds, 1, 11, a.as_mut_ptr(), a.len());
        mw_dataset_frame(back, 1, 11, b.as_mut_ptr(), b.len());
        assert_eq!(a, b);
        assert_eq!(
            mw_dataset_frame(ds, 1, 12, a.as_mut_ptr(), a.len()),
            MwStatus::InvalidArgument
        );
        mw_dataset_free(ds);
        mw_dataset_free(back);

        let missing = CString::new(dir.path().join("nope.mwd").to_str().unwrap()).unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(mw_dataset_load(missing.as_ptr(), &mut out), MwStatus::Io);
        assert!(last_error().contains("nope.mwd"));
        assert!(out.is_null());
    }
}

#[test]
fn model_encode_decode_and_corrupt_file() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("m.mwc");
    let state = TrainState::<f32>::new(TrainConfig::default()).unwrap();
    state.to_checkpoint().save(&ck).unwrap();
    let path = CString::new(ck.to_str().unwrap()).unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(mw_model_load(path.as_ptr(), &mut m), MwStatus::Ok);
        let mut kind = 0;
        assert_eq!(mw_model_env_kind(m, 1, &mut kind), MwStatus::Ok);
        assert_eq!(kind, 4);
        let sim = mw_sim_new(1);
        let mut f = [0u8; MW_FRAME_PIXELS];
        mw_sim_render(sim, f.as_mut_ptr(), f.len());
        mw_sim_free(sim);
        let (mut mu, mut lv) = ([0f32; MW_LATENT_DIM], [0f32; MW_LATENT_DIM]);
        assert_eq!(
            mw_model_encode(m, 0, f.as_ptr(), mu.as_mut_ptr(), lv.as_mut_ptr()),
            MwStatus::Ok
        );
        let mut probs = vec![0f32; MW_FRAME_PIXELS];
        assert_eq!(
            mw_model_decode(m, 1, mu.as_ptr(), probs.as_mut_ptr()),
            MwStatus::Ok
        );
        assert!(probs.iter().all(|&p| p > 0.0 && p < 1.0));
        assert_eq!(
            mw_model_encode(m, 2, f.as_ptr(), mu.as_mut_ptr(), lv.as_mut_ptr()),
            MwStatus::InvalidArgument
        );
        mw_model_free(m);
    }
    let mut bytes = std::fs::read(&ck).unwrap();
    bytes.truncate(bytes.len() / 2);
    std::fs::write(&ck, bytes).unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(mw_model_load(path.as_ptr(), &mut m), MwStatus::Corrupt);
        assert!(last_error().contains("byte offset"));
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/metaworld.h");
    let text = std::fs::read_to_string(header).unwrap();
    for sym in [
        "mw_sim_new",
        "mw_model_decode",
        "MW_STATUS_CORRUPT",
        "typedef struct MwModel MwModel",
    ] {
        assert!(text.contains(sym), "header lacks {sym}");
    }
    let Ok(out) = Command::new("cc")
        .args([
            "-fsyntax-only",
            "-std=c99",
            "-Wall",
            "-Werror",
            "-x",
            "c",
            header,
        ])
        .output()
    else {
        eprintln!("no C compiler on PATH; header syntax not checked");
        return;
    };
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
