use sparseflow::costsim::{count_ops, simulate_frame, simulate_timeline, CostParams};
use sparseflow::dfengine::{CostOp, FrameTrace, Phase, Scheme};

fn unit_params() -> CostParams {
    let mut p = CostParams::default_profile();
    p.t_decode_aer_base = 1.0;
    p.t_decode_aer_per_word = 0.5;
    p.t_state_rw_block = 2.0;
    p.t_npe_op = 0.25;
    p.t_fire_pixel = 1.0;
    p.t_emit_header = 0.5;
    p.t_emit_word = 0.25;
    p.t_sync = 0.75;
    p
}

#[test]
fn two_core_pipeline_by_hand() {
    let p = unit_params();
    let dec = CostOp::Decode {
        scheme: Scheme::Aer,
        words: 2,
        entries: 2,
    };
    // Core 0: item 0 arrives at 0, 2 us decode, 2 us state, emits a 3-word
    // item (1 us) at 5; then sync at 5.75.
    let core0 = vec![
        CostOp::Receive { item: 0 },
        dec,
        CostOp::StateAccess { blocks: 1 },
        CostOp::Emit { words: 3, sync: false },
        CostOp::Emit { words: 1, sync: true },
    ];
    // Core 1 waits for item 0 (t=5), decodes 2 us, fires 1 pixel with 4 ops
    // (2 us), syncs after item 1 (t=9.75).
    let core1 = vec![
        CostOp::Receive { item: 0 },
        dec,
        CostOp::Fire { pixels: 1, ops: 4 },
        CostOp::Receive { item: 1 },
        CostOp::Emit { words: 1, sync: true },
        CostOp::Phase(Phase::Recurrent),
        CostOp::Vector { ops: 8 },
    ];
    let trace = FrameTrace {
        camera_items: 1,
        cores: vec![core0, core1],
    };
    let f = simulate_frame(0, &trace, &p).unwrap();
    assert!((f.cores[0].sync_us - 5.75).abs() < 1e-12);
    assert!((f.cores[1].sync_us - 9.75).abs() < 1e-12);
    assert!((f.latency_us - 9.75).abs() < 1e-12);
    assert!((f.total_time_us - 11.75).abs() < 1e-12);
    // Core 1 idles from 0 to 5.
    assert!((f.cores[1].busy_us - (11.75 - 5.0)).abs() < 1e-12);
    let c = count_ops(&trace.cores[1]);
    assert_eq!((c.words_decoded, c.pixels_fired, c.vector_ops, c.events_emitted), (2, 1, 12, 1));
}

#[test]
fn receive_of_unsent_item_is_a_causality_error() {
    let trace = FrameTrace {
        camera_items: 1,
        cores: vec![vec![CostOp::Receive { item: 3 }]],
    };
    assert!(simulate_frame(0, &trace, &CostParams::default_profile()).is_err());
}

#[test]
fn energy_is_linear_in_counters() {
    let p = CostParams::default_profile();
    let ops = vec![
        CostOp::Decode {
            scheme: Scheme::Bitmask,
            words: 1,
            entries: 5,
        },
        CostOp::StateAccess { blocks: 9 },
        CostOp::Emit { words: 1, sync: true },
    ];
    let one = FrameTrace {
        camera_items: 0,
        cores: vec![ops.clone()],
    };
    let two = FrameTrace {
        camera_items: 0,
        cores: vec![[ops.clone(), ops].concat()],
    };
    let l = simulate_timeline(&[one.clone(), two], &p).unwrap();
    let (e1, e2) = (l.frames[0].energy_uj, l.frames[1].energy_uj);
    assert!(e1 > 0.0 && (e2 - 2.0 * e1).abs() < 1e-12);
    let by_hand = (p.energy.words_decoded + 5.0 * p.energy.entries_decoded + 9.0 * p.energy.state_blocks_rw
        + p.energy.events_emitted
        + p.energy.words_emitted)
        / 1000.0;
    assert!((e1 - by_hand).abs() < 1e-12);
}

#[test]
fn profiles_load_by_name_and_reject_negatives() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    let mut fast = CostParams::default_profile();
    fast.name = "fast".into();
    fast.t_npe_op = 0.001;
    CostParams::save_profiles(&[CostParams::default_profile(), fast.clone()], &path).unwrap();
    assert_eq!(CostParams::load(&path, "fast").unwrap(), fast);
    assert!(CostParams::load(&path, "missing").is_err());
    let mut bad = CostParams::default_profile();
    bad.t_sync = -1.0;
    assert!(bad.validate().is_err());
}
