use std::fs;
use std::path::Path;

use bregman_conceal::concealment::{LossMask, Method};
use bregman_conceal::imaging::{DisplacementVector, Frame};
use bregman_conceal::metrics_io::{read_pgm, write_pgm, yuv420_frame_bytes, REPORT_HEADER};
use bregman_conceal::pipeline::{
    cmd_conceal, cmd_evaluate, cmd_simulate, frame_file_name, mask_file_name, InputSpec, RunConfig,
};
use bregman_conceal::synthetic::global_translation;
use bregman_conceal::Error;
use tempfile::tempdir;

fn write_sequence(dir: &Path, frames: &[Frame]) {
    fs::create_dir_all(dir).unwrap();
    for (k, f) in frames.iter().enumerate() {
        write_pgm(f, &dir.join(frame_file_name(k))).unwrap();
    }
}

fn config(input: &Path, out: &Path) -> RunConfig {
    RunConfig::new(
        InputSpec {
            path: input.to_path_buf(),
            raw: None,
        },
        out,
    )
}

#[test]
fn qcif_loss_count_within_binomial_interval() {
    let tmp = tempdir().unwrap();
    let input = tmp.path().join("in");
    write_sequence(
        &input,
        &global_translation(176, 144, 30, DisplacementVector::ZERO, 3).unwrap(),
    );
    let s = cmd_simulate(&config(&input, &tmp.path().join("out"))).unwrap();
    assert_eq!(s.masks_written, 29);
    assert_eq!(s.total_mbs, 29 * 99);
    let n = s.total_mbs as f64;
    let (mean, sd) = (0.05 * n, (n * 0.05 * 0.95).sqrt());
    let lost = s.lost_mbs as f64;
    assert!(
        (lost - mean).abs() <= 2.576 * sd,
        "{lost} lost vs mean {mean}"
    );
}

#[test]
fn bregman_rows_report_solver_work() {
    let tmp = tempdir().unwrap();
    let input = tmp.path().join("in");
    write_sequence(
        &input,
        &global_translation(64, 48, 4, DisplacementVector::new(1.0, 0.0), 4).unwrap(),
    );
    let mut cfg = config(&input, &tmp.path().join("out"));
    cfg.loss_rate = 0.3;
    let s = cmd_conceal(&cfg).unwrap();
    assert_eq!(s.reports.len(), 3);
    for r in &s.reports {
        assert!(r.solver_outer_iters >= 1);
        assert!(r.final_q.unwrap().is_finite());
    }
    let csv = fs::read_to_string(&s.report_path).unwrap();
    assert_eq!(csv.lines().next().unwrap(), REPORT_HEADER);
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn avgn_matches_bregman_without_motion_or_loss() {
    let tmp = tempdir().unwrap();
    let input = tmp.path().join("in");
    write_sequence(
        &input,
        &global_translation(48, 32, 3, DisplacementVector::ZERO, 5).unwrap(),
    );
    let out = tmp.path().join("out");
    let mut cfg = config(&input, &out);
    cfg.methods = vec![Method::Bregman, Method::Avgn];
    cfg.loss_rate = 0.0;
    cmd_conceal(&cfg).unwrap();
    for k in 0..3 {
        let a = fs::read(out.join("avgn").join(frame_file_name(k))).unwrap();
        let b = fs::read(out.join("bregman").join(frame_file_name(k))).unwrap();
        assert_eq!(a, b, "frame {k}");
    }
}

#[test]
fn masks_round_trip_through_mask_in() {
    let tmp = tempdir().unwrap();
    let input = tmp.path().join("in");
    write_sequence(
        &input,
        &global_translation(48, 48, 3, DisplacementVector::ZERO, 6).unwrap(),
    );
    let masks = tmp.path().join("masks");
    fs::create_dir(&masks).unwrap();
    let mut lost = LossMask::for_frame(48, 48, 16).unwrap();
    lost.set_lost(4, true).unwrap();
    lost.write(&masks.join(mask_file_name(1))).unwrap();
    LossMask::for_frame(48, 48, 16)
        .unwrap()
        .write(&masks.join(mask_file_name(2)))
        .unwrap();

    let mut cfg = config(&input, &tmp.path().join("out"));
    cfg.mask_in = Some(masks.clone());
    cfg.methods = vec![Method::ZeroFill];
    let s = cmd_conceal(&cfg).unwrap();
    let counts: Vec<usize> = s.reports.iter().map(|r| r.lost_mb_count).collect();
    assert_eq!(counts, [1, 0]);

    fs::write(masks.join(mask_file_name(2)), "16 2 2\n").unwrap();
    assert!(matches!(
        cmd_conceal(&cfg),
        Err(Error::MalformedMask { .. })
    ));
}

#[test]
fn evaluate_static_suite() {
    let tmp = tempdir().unwrap();
    let input = tmp.path().join("in");
    write_sequence(
        &input,
        &global_translation(48, 48, 3, DisplacementVector::ZERO, 7).unwrap(),
    );
    let out = tmp.path().join("out");
    let mut cfg = config(&input, &out);
    cfg.methods = vec![Method::Copy, Method::ZeroFill];
    cfg.loss_rate = 0.5;
    cmd_conceal(&cfg).unwrap();

    cfg.concealed = Some(out.clone());
    let s = cmd_evaluate(&cfg).unwrap();
    assert_eq!(s.rows.len(), 6);
    for k in 0..3 {
        let copy = s
            .rows
            .iter()
            .find(|r| r.frame == k && r.method == "copy")
            .unwrap();
        let zero = s
            .rows
            .iter()
            .find(|r| r.frame == k && r.method == "zero-fill")
            .unwrap();
        assert_eq!(copy.psnr_db, 99.0);
        if k > 0 {
            assert!(zero.psnr_db < copy.psnr_db);
        }
    }
    let first = fs::read(&s.report_path).unwrap();
    cmd_evaluate(&cfg).unwrap();
    assert_eq!(first, fs::read(&s.report_path).unwrap());

    cfg.parallel_eval = true;
    cmd_evaluate(&cfg).unwrap();
    assert_eq!(first, fs::read(&s.report_path).unwrap());
}

#[test]
fn evaluate_rejects_geometry_mismatch() {
    let tmp = tempdir().unwrap();
    let input = tmp.path().join("in");
    write_sequence(
        &input,
        &global_translation(32, 32, 2, DisplacementVector::ZERO, 8).unwrap(),
    );
    let other = tmp.path().join("other").join("copy");
    write_sequence(
        &other,
        &global_translation(32, 16, 2, DisplacementVector::ZERO, 8).unwrap(),
    );
    let mut cfg = config(&input, &tmp.path().join("out"));
    cfg.concealed = Some(tmp.path().join("other"));
    assert!(matches!(
        cmd_evaluate(&cfg),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn raw_yuv_input_conceals_luma() {
    let tmp = tempdir().unwrap();
    let frames = global_translation(33, 17, 3, DisplacementVector::ZERO, 9).unwrap();
    let mut bytes = Vec::new();
    for f in &frames {
        bytes.extend(f.data().iter().map(|&x| x as u8));
        bytes.resize(bytes.len() + yuv420_frame_bytes(33, 17) - 33 * 17, 128);
    }
    let raw = tmp.path().join("seq.yuv");
    fs::write(&raw, &bytes).unwrap();
    let out = tmp.path().join("out");
    let mut cfg = RunConfig::new(
        InputSpec {
            path: raw,
            raw: Some((33, 17)),
        },
        &out,
    );
    cfg.methods = vec![Method::Copy];
    cfg.loss_rate = 1.0;
    let s = cmd_conceal(&cfg).unwrap();
    assert!(s.reports.iter().all(|r| r.psnr_db == 99.0));
    assert_eq!(
        read_pgm(&out.join("copy").join(frame_file_name(2))).unwrap(),
        frames[2]
    );
}
