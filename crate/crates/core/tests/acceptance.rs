//! Acceptance suite: one test per criterion, each printing a pass/fail
//! line and enforcing its runtime budget. Run with
//! `cargo test --test acceptance -- --nocapture` to see the lines.

mod common;

use std::time::Instant;
use voxcodec::attrcodec::{
    build_color_targets, reconstruct_attributes, train_attributes, AttrFrame, AttrTrainConfig,
};
use voxcodec::bitstream::{decode_cube_map, decode_indices, encode_cube_map, encode_indices};
use voxcodec::dynamic::{
    bezier_sample, decode_group, encode_group, DynamicMode, EncoderSettings, FrameGroup,
};
use voxcodec::geomcodec::{
    fine_tune_threshold_ops, make_sampling_plan, occupancy_probabilities, reconstruct_from_ops,
    sample_training_voxel, train_geometry, GeomTrainConfig,
};
use voxcodec::kdtree::brute_force_nearest;
use voxcodec::metrics::{bits_per_point, d1_psnr, d2_psnr, p2point_error, yuv_psnr, Psnr};
use voxcodec::neuralnet::{
    backward, positional_encode, quantize, Activation, Engine, NetworkArch, NetworkParams, Tape,
};
use voxcodec::partition::build_cube_set;
use voxcodec::pointcloud::{parse_ply, write_ply, VoxelTransform, VoxelizedCloud};
use voxcodec::rng::CounterRng;

fn tiny_arch(core: Activation, layer_norm: bool) -> NetworkArch {
    NetworkArch {
        input_dim: 3,
        posenc_levels_spatial: 2,
        posenc_levels_temporal: 0,
        residual_blocks: 2,
        inter_width: 8,
        intra_width: 6,
        output_dim: 1,
        core_activation: core,
        sine_frequency: 8.0,
        layer_norm,
    }
}

/// Central differences at steps h, h/2, h/4 combined by Richardson
/// extrapolation; stencils straddling a ReLU kink disagree between the two
/// extrapolants and are skipped. Never consults the analytic gradient.
fn central_difference(
    loss: &dyn Fn(&[f64]) -> f64,
    flat: &[f64],
    idx: usize,
    h: f64,
) -> Option<f64> {
    let eval = |delta: f64| {
        let mut p = flat.to_vec();
        p[idx] += delta;
        loss(&p)
    };
    let fd = |step: f64| (eval(step) - eval(-step)) / (2.0 * step);
    let (f1, f2, f3) = (fd(h), fd(h / 2.0), fd(h / 4.0));
    let r1 = (4.0 * f2 - f1) / 3.0;
    let r2 = (4.0 * f3 - f2) / 3.0;
    let denom = r1.abs().max(r2.abs()).max(1e-6);
    if (r1 - r2).abs() / denom > 1e-6 {
        None
    } else {
        Some(r2)
    }
}

#[test]
fn criterion_1_gradient_correctness() {
    let started = Instant::now();
    let mut total_checked = 0usize;
    let mut worst = 0.0f64;
    for (core, ln) in [
        (Activation::Relu, false),
        (Activation::Relu, true),
        (Activation::Sine, false),
        (Activation::Sine, true),
    ] {
        let arch = tiny_arch(core, ln);
        let mut rng = CounterRng::new(17);
        let flat_f32: Vec<f32> = (0..arch.param_count())
            .map(|_| rng.range_f64(-0.5, 0.5) as f32)
            .collect();
        let params = NetworkParams::unflatten(&arch, &flat_f32).unwrap();
        let coords: Vec<[f64; 3]> = (0..6)
            .map(|_| {
                [
                    rng.range_f64(-1.0, 1.0),
                    rng.range_f64(-1.0, 1.0),
                    rng.range_f64(-1.0, 1.0),
                ]
            })
            .collect();
        let levels = arch.component_levels();
        let mut enc = Vec::new();
        for c in &coords {
            enc.extend(positional_encode(c, &levels).unwrap());
        }
        let w: Vec<f64> = (0..coords.len()).map(|_| rng.range_f64(-1.0, 1.0)).collect();
        let engine = Engine::new(&arch);
        let n = coords.len();
        let loss = |flat: &[f64]| -> f64 {
            let mut tape = Tape::new(&arch, n);
            engine.forward_encoded(flat, &enc, n, &mut tape);
            engine
                .outputs(&tape)
                .iter()
                .zip(&w)
                .map(|(o, wi)| o * wi)
                .sum()
        };
        let analytic = backward(&params, &enc, &w).unwrap();
        let flat = params.flatten_f64();
        for idx in (0..flat.len()).step_by(4) {
            let fd = match central_difference(&loss, &flat, idx, 1e-4) {
                Some(fd) => fd,
                None => continue,
            };
            let denom = analytic[idx].abs().max(fd.abs()).max(1e-6);
            let rel = (analytic[idx] - fd).abs() / denom;
            assert!(
                rel < 1e-4,
                "criterion 1: FAIL at {core:?} ln={ln} param {idx}: rel {rel:.3e}"
            );
            worst = worst.max(rel);
            total_checked += 1;
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(total_checked >= 200, "only {total_checked} parameters checked");
    assert!(elapsed < 60.0, "criterion 1 overran: {elapsed:.1}s");
    println!(
        "criterion 1 (gradient correctness): PASS — {total_checked} parameters, worst rel err {worst:.2e}, {elapsed:.1}s"
    );
}

#[test]
fn criterion_2_exact_tiny_cloud_recovery() {
    let started = Instant::now();
    let cloud = common::sphere_shell(5, [16.0, 16.0, 16.0], 4.0, 5.0);
    assert!(cloud.len() <= 256, "fixture has {} points", cloud.len());
    let cubes = build_cube_set(&cloud, 2).unwrap();
    let arch = NetworkArch {
        input_dim: 3,
        posenc_levels_spatial: 6,
        posenc_levels_temporal: 0,
        residual_blocks: 2,
        inter_width: 32,
        intra_width: 16,
        output_dim: 1,
        core_activation: Activation::Relu,
        sine_frequency: 30.0,
        layer_norm: true,
    };
    let config = GeomTrainConfig {
        l1_weight: 0.0,
        steps: 50_000,
        batch_size: 256,
        occupied_ratio: 0.5,
        focal_gamma: 2.0,
        seed: 0,
        learning_rate: 1e-3,
        lr_decay: 0.1,
        weight_decay: 1e-4,
    };
    let trained = train_geometry(&cloud, &cubes, &arch, &config, None, false).unwrap();
    // unquantized parameters, threshold fine-tuned against the original
    let ops = occupancy_probabilities(&trained.params, &cubes);
    let tau = fine_tune_threshold_ops(&ops, &cloud, 30).unwrap();
    let recon = reconstruct_from_ops(&ops, 5, tau);
    let elapsed = started.elapsed().as_secs_f64();
    assert_eq!(
        recon.points(),
        cloud.points(),
        "criterion 2: FAIL — reconstruction differs from the original"
    );
    assert!(elapsed < 600.0, "criterion 2 overran: {elapsed:.1}s");
    println!(
        "criterion 2 (exact tiny-cloud recovery): PASS — {} points recovered exactly, tau {tau:.4}, {elapsed:.1}s",
        cloud.len()
    );
}

fn threshold_instances() -> Vec<(&'static str, VoxelizedCloud)> {
    let slab: Vec<[u32; 3]> = (0..16u32)
        .flat_map(|x| (0..16u32).map(move |y| [x, y, 7 + (x % 2)]))
        .collect();
    let torus: Vec<[u32; 3]> = (0..16i64)
        .flat_map(|x| (0..16i64).flat_map(move |y| (0..16i64).map(move |z| [x, y, z])))
        .filter(|p| {
            let dx = p[0] as f64 - 7.5;
            let dy = p[1] as f64 - 7.5;
            let dz = p[2] as f64 - 7.5;
            let ring = (dx * dx + dy * dy).sqrt() - 4.5;
            (ring * ring + dz * dz).sqrt() < 2.2
        })
        .map(|p| [p[0] as u32, p[1] as u32, p[2] as u32])
        .collect();
    let two_blobs = {
        let a = common::sphere_shell(4, [4.0, 4.0, 4.0], 0.0, 3.0);
        let b = common::sphere_shell(4, [11.0, 11.0, 11.0], 0.0, 3.5);
        let mut pts = a.points().to_vec();
        pts.extend_from_slice(b.points());
        VoxelizedCloud::new(4, pts, None).unwrap()
    };
    vec![
        ("shell", common::sphere_shell(4, [8.0, 8.0, 8.0], 3.0, 4.5)),
        ("thick-shell", common::sphere_shell(4, [7.0, 8.0, 8.0], 2.0, 4.0)),
        ("two-blobs", two_blobs),
        ("slab", VoxelizedCloud::new(4, slab, None).unwrap()),
        ("torus", VoxelizedCloud::new(4, torus, None).unwrap()),
    ]
}

#[test]
fn criterion_3_threshold_search_oracle() {
    let started = Instant::now();
    // millidecibel wiggles on the monotone flanks are expected: the ideal
    // ordering assumption behind strict unimodality rarely holds exactly
    let flank_tol = 0.05;
    let mut summaries = Vec::new();
    for (name, cloud) in threshold_instances() {
        let cubes = build_cube_set(&cloud, 2).unwrap();
        assert!(cubes.candidate_count() <= 4096);
        let zeta = cloud.len() as f64 / cubes.candidate_count() as f64;
        let arch = NetworkArch {
            input_dim: 3,
            posenc_levels_spatial: 5,
            posenc_levels_temporal: 0,
            residual_blocks: 1,
            inter_width: 24,
            intra_width: 12,
            output_dim: 1,
            core_activation: Activation::Relu,
            sine_frequency: 30.0,
            layer_norm: true,
        };
        let config = GeomTrainConfig {
            l1_weight: 0.0,
            steps: 1800,
            batch_size: 128,
            occupied_ratio: 0.5f64.max(zeta + 0.1),
            focal_gamma: 2.0,
            seed: 1,
            learning_rate: 1e-3,
            lr_decay: 0.1,
            weight_decay: 1e-4,
        };
        let trained = train_geometry(&cloud, &cubes, &arch, &config, None, false).unwrap();
        let ops = occupancy_probabilities(&trained.params, &cubes);

        // exhaustive scan over all inter-OP midpoints (plus the plateau
        // below the smallest OP, which reconstructs the whole candidate set)
        let mut unique: Vec<f64> = ops.iter().map(|(_, p)| *p).collect();
        unique.sort_by(|a, b| a.partial_cmp(b).unwrap());
        unique.dedup();
        let mut probes = vec![unique[0] / 2.0];
        for w in unique.windows(2) {
            probes.push((w[0] + w[1]) / 2.0);
        }
        let d_of = |tau: f64| -> f64 {
            let r = reconstruct_from_ops(&ops, 4, tau);
            if r.is_empty() {
                f64::NEG_INFINITY
            } else {
                d1_psnr(r.points(), cloud.points(), 4).unwrap().as_db()
            }
        };
        let curve: Vec<f64> = probes.iter().map(|&t| d_of(t)).collect();
        let scan_max = curve.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

        // single maximal plateau: non-decreasing, then non-increasing
        let first_max = curve.iter().position(|&v| v >= scan_max - 1e-9).unwrap();
        let last_max = curve.len()
            - 1
            - curve.iter().rev().position(|&v| v >= scan_max - 1e-9).unwrap();
        let rising = curve[..=first_max]
            .windows(2)
            .all(|w| w[1] >= w[0] - flank_tol);
        let falling = curve[last_max..]
            .windows(2)
            .all(|w| w[1] <= w[0] + flank_tol);
        let plateau = curve[first_max..=last_max]
            .iter()
            .all(|&v| v >= scan_max - flank_tol);
        assert!(
            rising && falling && plateau,
            "criterion 3: FAIL — {name} not unimodal"
        );

        let gs_tau = fine_tune_threshold_ops(&ops, &cloud, 30).unwrap();
        let gs = d_of(gs_tau);
        let matched = (scan_max.is_infinite() && gs.is_infinite() && scan_max > 0.0 && gs > 0.0)
            || (scan_max - gs).abs() <= 0.1;
        assert!(
            matched,
            "criterion 3: FAIL — {name}: search {gs:.4} dB vs scan {scan_max:.4} dB"
        );
        summaries.push(format!("{name} ({} probes, gap {:.4} dB)", probes.len(), {
            if scan_max.is_infinite() && gs.is_infinite() {
                0.0
            } else {
                (scan_max - gs).abs()
            }
        }));
    }

    // plateau structure: over 200 evenly spaced thresholds the quality is
    // piecewise constant, changing only across a distinct probability
    let cloud = common::sphere_shell(4, [8.0, 8.0, 8.0], 3.0, 4.5);
    let cubes = build_cube_set(&cloud, 2).unwrap();
    let config = GeomTrainConfig {
        l1_weight: 0.0,
        steps: 1200,
        batch_size: 128,
        occupied_ratio: 0.5,
        focal_gamma: 2.0,
        seed: 3,
        learning_rate: 1e-3,
        lr_decay: 0.1,
        weight_decay: 1e-4,
    };
    let arch = tiny_arch(Activation::Relu, true);
    let trained = train_geometry(&cloud, &cubes, &arch, &config, None, false).unwrap();
    let ops = occupancy_probabilities(&trained.params, &cubes);
    let mut unique: Vec<f64> = ops.iter().map(|(_, p)| *p).collect();
    unique.sort_by(|a, b| a.partial_cmp(b).unwrap());
    unique.dedup();
    let d_of = |tau: f64| -> f64 {
        let r = reconstruct_from_ops(&ops, 4, tau);
        if r.is_empty() {
            f64::NEG_INFINITY
        } else {
            d1_psnr(r.points(), cloud.points(), 4).unwrap().as_db()
        }
    };
    let mut prev_tau = 0.0;
    let mut prev_d = d_of(0.0);
    for k in 1..200 {
        let tau = k as f64 / 200.0;
        let d = d_of(tau);
        if d != prev_d {
            let crossed = unique.iter().any(|&p| p > prev_tau && p <= tau);
            assert!(
                crossed,
                "criterion 3: FAIL — quality changed on ({prev_tau}, {tau}] without crossing a probability"
            );
        }
        prev_tau = tau;
        prev_d = d;
    }

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "criterion 3 overran: {elapsed:.1}s");
    println!(
        "criterion 3 (threshold-search oracle): PASS — {}; piecewise-constant structure verified; {elapsed:.1}s",
        summaries.join(", ")
    );
}

#[test]
fn criterion_4_sampling_identity() {
    let started = Instant::now();
    // two occupancy rates: the same shell against coarser and finer cube grids
    let cloud = common::sphere_shell(5, [16.0, 16.0, 16.0], 4.0, 5.0);
    let fixtures = [
        build_cube_set(&cloud, 2).unwrap(), // zeta ~ 0.057
        build_cube_set(&cloud, 1).unwrap(), // zeta ~ 0.007
    ];
    let draws = 1_000_000u64;
    let mut details = Vec::new();
    for cubes in &fixtures {
        for beta in [0.1, 0.5, 0.8] {
            let plan = make_sampling_plan(&cloud, cubes, beta).unwrap();
            // algebraic identities at 64-bit
            assert!(
                (plan.occupied_weight + plan.candidate_weight - 1.0).abs() <= 1e-12,
                "criterion 4: FAIL — weights do not sum to one"
            );
            assert!(
                (plan.occupied_weight + plan.candidate_weight * plan.occupancy_rate - beta).abs()
                    <= 1e-12,
                "criterion 4: FAIL — mixture does not reproduce the ratio"
            );
            let mut rng = CounterRng::new(1234 + (beta * 10.0) as u64);
            let mut occupied = 0u64;
            for _ in 0..draws {
                if sample_training_voxel(&plan, &cloud, cubes, &mut rng).1 {
                    occupied += 1;
                }
            }
            let freq = occupied as f64 / draws as f64;
            assert!(
                (freq - beta).abs() <= 0.005,
                "criterion 4: FAIL — beta {beta}, zeta {:.4}: frequency {freq:.4}",
                plan.occupancy_rate
            );
            details.push(format!("beta {beta} zeta {:.4} freq {freq:.4}", plan.occupancy_rate));
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "criterion 4 overran: {elapsed:.1}s");
    println!(
        "criterion 4 (sampling identity): PASS — {}; {elapsed:.1}s",
        details.join("; ")
    );
}

#[test]
fn criterion_5_lossless_coding_and_sparsity() {
    let started = Instant::now();
    // 1000 random index sequences
    let mut rng = CounterRng::new(99);
    for round in 0..1000 {
        let n = rng.below(300) as usize;
        let spread = 1 + rng.below(24) as u32;
        let mut values: Vec<i32> = (0..n)
            .map(|_| {
                let m = rng.below(1u64 << spread) as i64;
                if rng.unit_f64() < 0.5 {
                    -m as i32
                } else {
                    m as i32
                }
            })
            .collect();
        if round == 0 {
            values = vec![i32::MAX, i32::MIN + 1, 0, -1, 1];
        }
        let bytes = encode_indices(&values);
        assert_eq!(
            decode_indices(&bytes, values.len()).unwrap(),
            values,
            "criterion 5: FAIL — index roundtrip"
        );
    }
    // 100 random cube maps
    for _ in 0..100 {
        let m = 1 + rng.below(5) as u8;
        let side = 1u64 << m;
        let n = rng.below(side * side) as usize;
        let mut cubes: Vec<[u32; 3]> = (0..n)
            .map(|_| {
                [
                    rng.below(side) as u32,
                    rng.below(side) as u32,
                    rng.below(side) as u32,
                ]
            })
            .collect();
        cubes.sort_unstable();
        cubes.dedup();
        let bytes = encode_cube_map(&cubes, m);
        assert_eq!(
            decode_cube_map(&bytes, m).unwrap(),
            cubes,
            "criterion 5: FAIL — cube-map roundtrip"
        );
    }

    // L1 training must shrink the entropy-coded parameter payload
    let cloud = common::sphere_shell(5, [16.0, 16.0, 16.0], 4.0, 5.0);
    let cubes = build_cube_set(&cloud, 2).unwrap();
    let arch = NetworkArch {
        input_dim: 3,
        posenc_levels_spatial: 5,
        posenc_levels_temporal: 0,
        residual_blocks: 1,
        inter_width: 24,
        intra_width: 12,
        output_dim: 1,
        core_activation: Activation::Relu,
        sine_frequency: 30.0,
        layer_norm: true,
    };
    let payload_at = |l1: f64| {
        let config = GeomTrainConfig {
            l1_weight: l1,
            steps: 1200,
            batch_size: 128,
            occupied_ratio: 0.5,
            focal_gamma: 2.0,
            seed: 7,
            learning_rate: 1e-3,
            lr_decay: 0.1,
            weight_decay: 1e-4,
        };
        let trained = train_geometry(&cloud, &cubes, &arch, &config, None, false).unwrap();
        encode_indices(&quantize(&trained.params, 1.0 / 1024.0).flatten()).len()
    };
    let plain = payload_at(0.0);
    let sparse = payload_at(50.0);
    assert!(
        sparse < plain,
        "criterion 5: FAIL — payload {sparse} at l1=50 not below {plain} at l1=0"
    );

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "criterion 5 overran: {elapsed:.1}s");
    println!(
        "criterion 5 (lossless coding): PASS — 1000 index + 100 cube-map roundtrips; payload {plain} B (l1=0) vs {sparse} B (l1=50); {elapsed:.1}s"
    );
}

fn small_settings() -> EncoderSettings {
    EncoderSettings {
        mode: DynamicMode::Intra,
        cube_bits: 2,
        seed: 0,
        geom: GeomTrainConfig {
            l1_weight: 0.0,
            steps: 500,
            batch_size: 128,
            occupied_ratio: 0.5,
            focal_gamma: 2.0,
            seed: 0,
            learning_rate: 2e-3,
            lr_decay: 0.1,
            weight_decay: 1e-4,
        },
        attr: AttrTrainConfig {
            l1_weight: 0.0,
            steps: 500,
            batch_size: 128,
            seed: 0,
            learning_rate: 2e-3,
            lr_decay: 0.1,
            weight_decay: 1e-4,
        },
        geom_arch: NetworkArch {
            input_dim: 3,
            posenc_levels_spatial: 5,
            posenc_levels_temporal: 0,
            residual_blocks: 1,
            inter_width: 24,
            intra_width: 12,
            output_dim: 1,
            core_activation: Activation::Relu,
            sine_frequency: 30.0,
            layer_norm: true,
        },
        attr_arch: NetworkArch {
            input_dim: 3,
            posenc_levels_spatial: 5,
            posenc_levels_temporal: 0,
            residual_blocks: 1,
            inter_width: 24,
            intra_width: 12,
            output_dim: 3,
            core_activation: Activation::Sine,
            sine_frequency: 16.0,
            layer_norm: true,
        },
        temporal_levels: 2,
        geom_step: 1.0 / 1024.0,
        attr_step: 1.0 / 4096.0,
        threshold_steps: 20,
        geometry_only: false,
        fresh_init: false,
        transform: VoxelTransform::identity(),
    }
}

#[test]
fn criterion_6_end_to_end_determinism() {
    let started = Instant::now();
    let cloud = common::paint(&common::sphere_shell(5, [16.0, 16.0, 16.0], 4.0, 5.0));
    let group = FrameGroup::new(vec![cloud.clone()]).unwrap();
    let settings = small_settings();

    let outcome_a = encode_group(&group, &settings).unwrap();
    let outcome_b = encode_group(&group, &settings).unwrap();
    let bytes_a = outcome_a.stream.assemble();
    assert_eq!(
        bytes_a,
        outcome_b.stream.assemble(),
        "criterion 6: FAIL — encoding is not deterministic"
    );

    // self-contained decode, twice, byte-identical output
    let parsed = voxcodec::bitstream::CodedStream::disassemble(&bytes_a).unwrap();
    let dec1 = decode_group(&parsed).unwrap();
    let dec2 = decode_group(&parsed).unwrap();
    let ply1 = write_ply(&dec1.frames[0]);
    let ply2 = write_ply(&dec2.frames[0]);
    assert_eq!(ply1, ply2, "criterion 6: FAIL — re-decode differs");

    // decoded output equals the encoder-side reconstruction exactly
    assert_eq!(
        dec1.frames[0], outcome_a.frames[0].reconstruction,
        "criterion 6: FAIL — decoder disagrees with encoder-side reconstruction"
    );
    // and the PLY written from it parses back to the same cloud
    let reparsed = parse_ply(&ply1).unwrap();
    assert_eq!(reparsed.len(), dec1.frames[0].len());

    // rate accounting is exact: file bits over original points
    let bpp = bits_per_point(bytes_a.len(), cloud.len()).unwrap();
    assert_eq!(
        bpp,
        bytes_a.len() as f64 * 8.0 / cloud.len() as f64,
        "criterion 6: FAIL — bpp accounting"
    );

    let elapsed = started.elapsed().as_secs_f64();
    println!(
        "criterion 6 (determinism and self-containment): PASS — {} B stream, bpp {bpp:.3}, {elapsed:.1}s",
        bytes_a.len()
    );
}

#[test]
fn criterion_7_attribute_convergence() {
    let started = Instant::now();
    // constant color, 20K steps: every channel within 1/255
    let shell = common::sphere_shell(4, [8.0, 8.0, 8.0], 3.0, 4.5);
    let constant = VoxelizedCloud::new(
        4,
        shell.points().to_vec(),
        Some(vec![[60, 170, 230]; shell.len()]),
    )
    .unwrap();
    let geometry = VoxelizedCloud::new(4, shell.points().to_vec(), None).unwrap();
    let targets = build_color_targets(&geometry, &constant).unwrap();
    let arch = NetworkArch {
        input_dim: 3,
        posenc_levels_spatial: 5,
        posenc_levels_temporal: 0,
        residual_blocks: 2,
        inter_width: 32,
        intra_width: 16,
        output_dim: 3,
        core_activation: Activation::Sine,
        sine_frequency: 24.0,
        layer_norm: true,
    };
    let config = AttrTrainConfig {
        l1_weight: 0.0,
        steps: 20_000,
        batch_size: 256,
        seed: 0,
        learning_rate: 1e-3,
        lr_decay: 0.1,
        weight_decay: 1e-4,
    };
    let frames = [AttrFrame {
        targets: &targets,
        frame: 0,
        frame_count: 1,
    }];
    let out = train_attributes(&frames, 4, &arch, &config, constant.len() as u64, None, false)
        .unwrap();
    let colored = reconstruct_attributes(&out.params, &geometry, None);
    let mut max_err = 0i32;
    for c in colored.colors().unwrap() {
        for (got, want) in c.iter().zip(&[60u8, 170, 230]) {
            max_err = max_err.max((*got as i32 - *want as i32).abs());
        }
    }
    assert!(
        max_err <= 1,
        "criterion 7: FAIL — constant color max error {max_err}/255"
    );

    // two-tone shell, 100K steps: Y PSNR at least 40 dB
    let two_tone = common::two_tone_shell(
        5,
        [16.0, 16.0, 16.0],
        7.0,
        8.5,
        [220, 40, 40],
        [40, 40, 220],
    );
    let geometry = VoxelizedCloud::new(5, two_tone.points().to_vec(), None).unwrap();
    let targets = build_color_targets(&geometry, &two_tone).unwrap();
    let arch = NetworkArch {
        inter_width: 48,
        intra_width: 24,
        posenc_levels_spatial: 6,
        ..arch
    };
    let config = AttrTrainConfig {
        steps: 100_000,
        ..config
    };
    let frames = [AttrFrame {
        targets: &targets,
        frame: 0,
        frame_count: 1,
    }];
    let out = train_attributes(&frames, 5, &arch, &config, two_tone.len() as u64, None, false)
        .unwrap();
    let colored = reconstruct_attributes(&out.params, &geometry, None);
    let (y, _yuv) = yuv_psnr(&colored, &two_tone).unwrap();
    assert!(
        y.as_db() >= 40.0,
        "criterion 7: FAIL — two-tone Y PSNR {y}"
    );

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 900.0, "criterion 7 overran: {elapsed:.1}s");
    println!(
        "criterion 7 (attribute convergence): PASS — constant max err {max_err}/255, two-tone Y {y} dB, {elapsed:.1}s"
    );
}

#[test]
fn criterion_8_dynamic_mode_contracts() {
    let started = Instant::now();

    // Bernstein endpoints are the control points, bit for bit
    let arch = tiny_arch(Activation::Relu, true);
    let mut rng = CounterRng::new(8);
    let controls: Vec<NetworkParams> = (0..3)
        .map(|_| NetworkParams::initialize(&arch, &mut rng))
        .collect();
    for (t, expect) in [(0u16, &controls[0]), (7, &controls[2])] {
        let sampled = bezier_sample(&controls, t, 8);
        let got: Vec<u32> = sampled.flatten().iter().map(|v| v.to_bits()).collect();
        let want: Vec<u32> = expect.flatten().iter().map(|v| v.to_bits()).collect();
        assert_eq!(got, want, "criterion 8: FAIL — endpoint t={t} not exact");
    }

    // residual index accumulation over 8 frames reproduces the encoder
    // buffer bit-exactly
    let frames: Vec<VoxelizedCloud> = (0..8)
        .map(|t| {
            common::sphere_shell(
                5,
                [12.0 + t as f64, 16.0, 16.0 - 0.5 * t as f64],
                3.0,
                4.2,
            )
        })
        .collect();
    let group = FrameGroup::new(frames).unwrap();
    let mut settings = small_settings();
    settings.mode = DynamicMode::Residual;
    settings.geometry_only = true;
    settings.geom.steps = 150;
    let out = encode_group(&group, &settings).unwrap();
    let decoded = decode_group(&out.stream).unwrap();
    for t in 0..8 {
        assert_eq!(
            decoded.geom_indices[t], out.frames[t].geom_indices,
            "criterion 8: FAIL — residual buffer mismatch at frame {t}"
        );
        assert_eq!(
            decoded.frames[t], out.frames[t].reconstruction,
            "criterion 8: FAIL — residual reconstruction mismatch at frame {t}"
        );
    }

    // a single-frame group in 4D mode decodes identically to static coding
    let single = FrameGroup::new(vec![common::sphere_shell(5, [16.0, 16.0, 16.0], 4.0, 5.0)])
        .unwrap();
    let mut st = small_settings();
    st.geometry_only = true;
    st.geom.steps = 200;
    let mut fd = st.clone();
    fd.mode = DynamicMode::FourD;
    let a = encode_group(&single, &st).unwrap();
    let b = encode_group(&single, &fd).unwrap();
    assert_eq!(
        a.stream.assemble(),
        b.stream.assemble(),
        "criterion 8: FAIL — 4D with one frame differs from static"
    );
    assert_eq!(
        decode_group(&a.stream).unwrap().frames,
        decode_group(&b.stream).unwrap().frames
    );

    let elapsed = started.elapsed().as_secs_f64();
    println!(
        "criterion 8 (dynamic-mode contracts): PASS — endpoints exact, 8-frame residual buffers bit-equal, 4D/static single-frame identical, {elapsed:.1}s"
    );
}

#[test]
fn criterion_9_metric_oracles() {
    let started = Instant::now();

    // p2point equals brute force on sets up to 2000 points
    let mut rng = CounterRng::new(55);
    let a: Vec<[u32; 3]> = (0..2000)
        .map(|_| [rng.below(128) as u32, rng.below(128) as u32, rng.below(128) as u32])
        .collect();
    let b: Vec<[u32; 3]> = (0..1500)
        .map(|_| [rng.below(128) as u32, rng.below(128) as u32, rng.below(128) as u32])
        .collect();
    let got = p2point_error(&b, &a).unwrap();
    let want: f64 = b
        .iter()
        .map(|q| brute_force_nearest(&a, q).0 as f64)
        .sum::<f64>()
        / b.len() as f64;
    assert_eq!(got, want, "criterion 9: FAIL — p2point vs brute force");

    // hand-computed D1 values
    let one = vec![[0u32, 0, 0]];
    let off = vec![[1u32, 0, 0]];
    let d1_10 = d1_psnr(&off, &one, 10).unwrap().as_db();
    let want_10 = 10.0 * (3.0f64 * 1023.0 * 1023.0).log10();
    assert!(
        (d1_10 - want_10).abs() < 1e-9,
        "criterion 9: FAIL — D1 at N=10: {d1_10} vs {want_10}"
    );
    let d1_5 = d1_psnr(&off, &one, 5).unwrap().as_db();
    let want_5 = 10.0 * (3.0f64 * 31.0 * 31.0).log10();
    assert!((d1_5 - want_5).abs() < 1e-9);

    // planar D2 fixtures
    let plane: Vec<[u32; 3]> = (0..14u32)
        .flat_map(|x| (0..14u32).map(move |y| [x, y, 6]))
        .collect();
    let shifted_in_plane: Vec<[u32; 3]> = plane.iter().map(|p| [p[0] + 1, p[1], p[2]]).collect();
    let d2 = d2_psnr(&shifted_in_plane, &plane, 5).unwrap();
    assert_eq!(
        d2.psnr,
        Psnr::Infinite,
        "criterion 9: FAIL — in-plane offset must be invisible to D2"
    );
    let lifted: Vec<[u32; 3]> = plane.iter().map(|p| [p[0], p[1], p[2] + 1]).collect();
    let d2_lift = d2_psnr(&lifted, &plane, 5).unwrap().psnr.as_db();
    let d1_lift = d1_psnr(&lifted, &plane, 5).unwrap().as_db();
    assert!(
        (d2_lift - d1_lift).abs() < 1e-9,
        "criterion 9: FAIL — normal offset: D2 {d2_lift} vs D1 {d1_lift}"
    );

    let elapsed = started.elapsed().as_secs_f64();
    println!(
        "criterion 9 (metric oracles): PASS — brute-force parity, hand D1 values, planar D2 fixtures, {elapsed:.1}s"
    );
}

/// Non-blocking trend check: sweeping the L1 weight over the published
/// grid should not increase the rate. Logged, never failed.
#[test]
fn criterion_10_rate_trend_logged() {
    let started = Instant::now();
    let cloud = common::figure_cloud(7);
    let group = FrameGroup::new(vec![cloud.clone()]).unwrap();
    let mut results = Vec::new();
    for l1 in [1.0, 5.0, 20.0, 50.0] {
        let mut settings = small_settings();
        settings.cube_bits = 3;
        settings.geometry_only = true;
        settings.geom_arch = NetworkArch {
            input_dim: 3,
            posenc_levels_spatial: 7,
            posenc_levels_temporal: 0,
            residual_blocks: 2,
            inter_width: 64,
            intra_width: 32,
            output_dim: 1,
            core_activation: Activation::Relu,
            sine_frequency: 30.0,
            layer_norm: true,
        };
        settings.geom = GeomTrainConfig {
            l1_weight: l1,
            steps: 1500,
            batch_size: 512,
            occupied_ratio: 0.5,
            focal_gamma: 2.0,
            seed: 0,
            learning_rate: 1e-3,
            lr_decay: 0.1,
            weight_decay: 1e-4,
        };
        settings.threshold_steps = 12;
        let outcome = encode_group(&group, &settings).unwrap();
        let bytes = outcome.stream.assemble().len();
        let bpp = bits_per_point(bytes, cloud.len()).unwrap();
        results.push((l1, bpp));
    }
    let monotone = results.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12);
    let line = results
        .iter()
        .map(|(l1, bpp)| format!("l1 {l1}: {bpp:.4} bpp"))
        .collect::<Vec<_>>()
        .join(", ");
    let elapsed = started.elapsed().as_secs_f64();
    if monotone {
        println!(
            "criterion 10 (rate trend, non-blocking): PASS — non-increasing bpp over the sweep: {line}; {elapsed:.1}s"
        );
    } else {
        println!(
            "criterion 10 (rate trend, non-blocking): WARN — bpp not monotone: {line}; {elapsed:.1}s"
        );
    }
}
