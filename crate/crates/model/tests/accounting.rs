//! Dual-route accounting checks: the analytic parameter count against the
//! live store enumeration, and the analytic MAC report against the tape's
//! instrumented counters during real forward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evit_model::backbone::{backbone_forward, build_params};
use evit_model::flops::{count_flops, count_params, esa_attention_macs};
use evit_model::params::Init;
use evit_model::BackboneConfig;
use evit_tensor::{Tape, Tensor};

#[test]
fn param_count_matches_store_for_fixed_configs() {
    for cfg in [
        BackboneConfig::tiny(),
        BackboneConfig::micro(),
        BackboneConfig::nano(),
    ] {
        let report = count_params(&cfg).unwrap();
        let store = build_params::<f32>(&cfg, Init::Zeros).unwrap();
        assert_eq!(report.total(), store.total_params() as u64);
    }
}

/// Draws a random valid configuration: widths divisible by heads, even
/// attention halves, odd kernels.
fn random_config(rng: &mut ChaCha8Rng) -> BackboneConfig {
    let mut cfg = BackboneConfig::nano();
    for stage in 0..4 {
        let heads = [1usize, 2, 4][rng.gen_range(0..3)];
        // Half-width must stay divisible by heads in case the stage gets a
        // transformer block.
        let width = 2 * heads * rng.gen_range(1..=3);
        cfg.stage_widths[stage] = width;
        cfg.stage_heads[stage] = heads;
        cfg.stage_depths[stage] = rng.gen_range(1..=2);
        cfg.esa_strides[stage] = [1, 2][rng.gen_range(0..2)];
        cfg.ltb_positions[stage] = if rng.gen_bool(0.5) {
            vec![rng.gen_range(0..cfg.stage_depths[stage])]
        } else {
            vec![]
        };
    }
    cfg.lffn_ratio = [1.0, 2.0, 3.0][rng.gen_range(0..3)];
    cfg.lffn_depthwise = rng.gen_bool(0.5);
    cfg.mhca_kernel = [1, 3, 5][rng.gen_range(0..3)];
    cfg.validate().unwrap();
    cfg
}

#[test]
fn param_count_matches_store_for_randomized_configs() {
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    for trial in 0..12 {
        let cfg = random_config(&mut rng);
        let report = count_params(&cfg).unwrap();
        let store = build_params::<f32>(&cfg, Init::Seeded(trial)).unwrap();
        assert_eq!(
            report.total(),
            store.total_params() as u64,
            "trial {trial}: {cfg:?}"
        );
    }
}

#[test]
fn doubling_widths_quadruples_dominant_param_terms() {
    let mut cfg = BackboneConfig::micro();
    cfg.ltb_positions = [vec![], vec![], vec![], vec![]];
    cfg.lffn_depthwise = false;
    let base = count_params(&cfg).unwrap();
    let mut doubled_cfg = cfg.clone();
    for w in &mut doubled_cfg.stage_widths {
        *w *= 2;
    }
    let doubled = count_params(&doubled_cfg).unwrap();
    // Pointwise projection params scale with width^2; compare one ECB's
    // projection share after stripping the linear-in-width bias terms.
    for (a, b) in base.blocks.iter().zip(&doubled.blocks) {
        if a.name.contains("block") {
            let d = cfg.stage_widths[a.stage] as u64;
            let hidden = (cfg.lffn_ratio * d as f64) as u64;
            let k = cfg.mhca_kernel as u64;
            let heads = cfg.stage_heads[a.stage] as u64;
            // Strip the linear-in-width terms (three conv biases, the norm
            // pair, the expand bias) to isolate the c_in*c_out terms.
            let linear = |d: u64, hidden: u64| d + 2 * d + d + hidden + d;
            let quad_a = a.params - linear(d, hidden);
            let quad_b = b.params - linear(2 * d, 2 * hidden);
            assert_eq!(quad_b, 4 * quad_a, "block {} (heads {heads}, k {k})", a.name);
        }
    }
}

#[test]
fn flop_report_total_matches_instrumented_forward() {
    for (cfg, size) in [
        (BackboneConfig::nano(), 32usize),
        (BackboneConfig::micro(), 64),
    ] {
        let report = count_flops(&cfg, size, size).unwrap();
        let store = build_params::<f32>(&cfg, Init::Seeded(7)).unwrap();
        let image = Tensor::<f32>::from_fn(&[3, size, size], |i| ((i * 17) % 31) as f32 * 0.05);

        let mut tape = Tape::new();
        let input = tape.leaf(image);
        let bound = store.bind(&mut tape);
        backbone_forward(&mut tape, input, &cfg, &bound).unwrap();

        assert_eq!(
            report.total_macs(),
            tape.mac_count(),
            "analytic vs instrumented for input {size}"
        );
    }
}

#[test]
fn attention_macs_follow_inverse_square_stride_law() {
    // All-transformer config so every stage contributes attention terms.
    let mut cfg = BackboneConfig::micro();
    cfg.ltb_positions = [vec![0], vec![0], vec![0], vec![0]];
    // 256 input: lattices 64/32/16/8, divisible by strides up to 8.
    let strides = [1usize, 2, 4, 8];
    let base: Vec<u64> = {
        cfg.esa_strides = [1, 1, 1, 1];
        count_flops(&cfg, 256, 256)
            .unwrap()
            .blocks
            .iter()
            .map(|b| b.attention_macs)
            .collect()
    };
    for &s in &strides {
        cfg.esa_strides = [s, s, s, s];
        let report = count_flops(&cfg, 256, 256).unwrap();
        for (b, &b0) in report.blocks.iter().zip(&base) {
            assert_eq!(
                b.attention_macs * (s as u64) * (s as u64),
                b0,
                "stride {s}, block {}",
                b.name
            );
        }
    }
}

#[test]
fn attention_flops_also_verified_by_instrumentation() {
    // The per-stride law must hold for the instrumented counter too: the
    // difference between the full forward and a conv-only forward isolates
    // the attention plus projection MACs.
    let mut cfg = BackboneConfig::nano();
    cfg.ltb_positions = [vec![], vec![], vec![0], vec![0]];
    let image = Tensor::<f32>::from_fn(&[3, 64, 64], |i| ((i * 13) % 41) as f32 * 0.03);

    let run_macs = |cfg: &BackboneConfig| {
        let store = build_params::<f32>(cfg, Init::Seeded(8)).unwrap();
        let mut tape = Tape::new();
        let input = tape.leaf(image.clone());
        let bound = store.bind(&mut tape);
        backbone_forward(&mut tape, input, cfg, &bound).unwrap();
        tape.mac_count()
    };

    for s in [1usize, 2] {
        cfg.esa_strides = [1, 1, s, s];
        let analytic = count_flops(&cfg, 64, 64).unwrap();
        assert_eq!(analytic.total_macs(), run_macs(&cfg), "stride {s}");
    }

    // Sanity for the projection-free formula itself.
    assert_eq!(esa_attention_macs(8, 64, 2), 2 * 64 * 16 * 8);
}
