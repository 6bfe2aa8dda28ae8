use memtrans_core::cost::{
    baseline_cost, baseline_crossbars, cost_from_trace, parse_traces, proposed_area_um2, reference_annotations, scaling_sweep,
    BaselineArch, ComponentCosts, Hardware, GPT3_PARAMS,
};
use memtrans_core::crossbar::{CrossbarConfig, CrossbarEngine};
use memtrans_core::decompose::decompose_layer;
use memtrans_core::exec::{run_layer, QuantizedWeights, WeightBank};
use memtrans_core::trace::{Bandwidths, TraceSummary};
use memtrans_core::{Error, LayerSpec, WeightSet};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn trace(n: usize, m: usize, heads: usize, seed: u64, dup: usize) -> TraceSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = LayerSpec::new(n, m, 2 * m, heads).unwrap();
    let w = WeightSet::random(&spec, &mut rng);
    let x = Array2::from_shape_fn((n, m), |_| rng.random_range(-1.0..1.0));
    let bank = WeightBank::new(&spec, &w).unwrap();
    let qw = QuantizedWeights::new(&bank, 8).unwrap();
    let cfg = CrossbarConfig {
        seed,
        dup_factor: dup,
        ..Default::default()
    };
    let engine = CrossbarEngine::new(cfg, &qw).unwrap();
    let run = run_layer(&decompose_layer(&spec), x.view(), &bank, &engine).unwrap();
    engine.summarize(&run, Bandwidths::default())
}

fn assert_closed(r: &memtrans_core::cost::CostReport) {
    assert_eq!(r.area_mm2, r.area_breakdown_mm2.values().sum::<f64>());
    assert_eq!(r.energy_mj, r.energy_breakdown_mj.values().sum::<f64>());
}

#[test]
fn empty_trace_has_static_area_only() {
    let r = cost_from_trace(&[], &Hardware::default(), &ComponentCosts::default()).unwrap();
    assert_eq!(r.energy_mj, 0.0);
    assert!(r.area_mm2 > 0.0);
    assert_eq!(r.latency_s, 0.0);
    assert_closed(&r);
}

#[test]
fn two_layers_double_the_energy() {
    let costs = ComponentCosts::default();
    let hw = Hardware::default();
    let t = trace(4, 8, 2, 3, 1);
    let one = cost_from_trace(std::slice::from_ref(&t), &hw, &costs).unwrap();
    let two = cost_from_trace(&[t.clone(), t], &hw, &costs).unwrap();
    assert_eq!(two.energy_mj, 2.0 * one.energy_mj);
    assert_eq!(two.area_mm2, one.area_mm2);
    assert_eq!(two.latency_s, 2.0 * one.latency_s);
}

#[test]
fn latency_never_below_bound() {
    let costs = ComponentCosts::default();
    for (n, m, heads) in [(1, 2, 1), (4, 8, 2), (8, 16, 4)] {
        for dup in [1, 4] {
            let r = cost_from_trace(&[trace(n, m, heads, 1, dup)], &Hardware::default(), &costs).unwrap();
            let lb = r.lower_bound.unwrap();
            assert!(r.latency_s >= lb.t_lb);
            assert!(lb.alpha_a >= 1.0);
            assert_closed(&r);
        }
    }
}

#[test]
fn non_crossbar_trace_is_rejected() {
    let mut t = trace(2, 4, 1, 0, 1);
    for s in &mut t.subops {
        s.steps = 0;
    }
    assert!(matches!(
        cost_from_trace(&[t], &Hardware::default(), &ComponentCosts::default()),
        Err(Error::Accounting(_))
    ));
}

#[test]
fn unknown_component_in_trace_json() {
    let t = trace(2, 4, 1, 0, 1);
    let mut v = serde_json::to_value(&t).unwrap();
    v["totals"]["compute.laser"] = serde_json::json!(4);
    let text = serde_json::to_string(&v).unwrap();
    assert!(matches!(parse_traces(&text), Err(Error::Accounting(_))));
    let ok = serde_json::to_string(&t).unwrap();
    assert_eq!(parse_traces(&ok).unwrap(), vec![t]);
}

#[test]
fn traditional_crossbar_area_proportions() {
    let costs = ComponentCosts::default();
    let layer = [LayerSpec::new(1, 64, 64, 1).unwrap().without_attention()];
    let r = baseline_cost(&layer, BaselineArch::Traditional, &costs).unwrap();
    let share = |k: &str| r.area_breakdown_mm2[k] / r.area_mm2;
    let rest = 1.0 - share("dac") - share("adc");
    assert!((share("dac") - 0.51).abs() < 0.005, "{}", share("dac"));
    assert!((share("adc") - 0.45).abs() < 0.005, "{}", share("adc"));
    assert!((rest - 0.04).abs() < 0.005, "{rest}");
    assert_closed(&r);
}

#[test]
fn baseline_area_is_linear() {
    let costs = ComponentCosts::default();
    for arch in BaselineArch::ALL {
        let a = baseline_crossbars(128 * 128 * 8, arch, &costs).unwrap();
        let b = baseline_crossbars(2 * 128 * 128 * 8, arch, &costs).unwrap();
        assert_eq!(b, 2 * a);
    }
}

#[test]
fn gpt3_needs_thousands_of_chips() {
    let costs = ComponentCosts::default();
    let xbars = baseline_crossbars(GPT3_PARAMS, BaselineArch::Traditional, &costs).unwrap();
    let chips = xbars as f64 / costs.baseline.crossbars_per_chip as f64;
    assert!((1000.0..10000.0).contains(&chips), "{chips}");
}

#[test]
fn sweep_point_matches_single_costing() {
    let costs = ComponentCosts::default();
    let hw = Hardware::default();
    let layers = [LayerSpec::new(8, 256, 1024, 4).unwrap()];
    let p: u64 = layers[0].crossbar_param_count();
    let rows = scaling_sweep(&[p], &BaselineArch::ALL, &hw, &costs).unwrap();
    for arch in BaselineArch::ALL {
        let row = rows.iter().find(|r| r.architecture == arch.key()).unwrap();
        let report = baseline_cost(&layers, arch, &costs).unwrap();
        assert!((row.area_mm2 - report.area_mm2).abs() <= 1e-12 * report.area_mm2);
    }
    let ours = rows.iter().find(|r| r.architecture == "proposed").unwrap();
    let direct: f64 = proposed_area_um2(p, &hw, &costs).unwrap().values().sum::<f64>() / 1e6;
    assert_eq!(ours.area_mm2, direct);
}

#[test]
fn zero_parameters_leave_static_floor() {
    let costs = ComponentCosts::default();
    let rows = scaling_sweep(&[0], &BaselineArch::ALL, &Hardware::default(), &costs).unwrap();
    for r in rows {
        if r.architecture == "proposed" {
            assert!(r.area_mm2 > 0.0);
        } else {
            assert_eq!(r.area_mm2, 0.0);
        }
    }
}

#[test]
fn annotations_are_reported() {
    let notes = reference_annotations(&Hardware::default(), &ComponentCosts::default()).unwrap();
    assert!(notes.iter().any(|a| a.published == 39.0));
    assert!(notes.iter().any(|a| a.published == 2777.0 && a.simulated.is_some()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn breakdown_closure(seed in 0u64..1000, heads in 1usize..3, n in 1usize..5) {
        let m = 2 * heads;
        let mut costs = ComponentCosts::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        costs.resistor.energy_pj *= rng.random_range(0.5..2.0);
        costs.cache_bit.area_um2 *= rng.random_range(0.5..2.0);
        let r = cost_from_trace(&[trace(n, m, heads, seed, 1)], &Hardware::default(), &costs).unwrap();
        prop_assert_eq!(r.area_mm2, r.area_breakdown_mm2.values().sum::<f64>());
        prop_assert_eq!(r.energy_mj, r.energy_breakdown_mj.values().sum::<f64>());
        prop_assert!(r.latency_s >= r.lower_bound.unwrap().t_lb);
        for arch in BaselineArch::ALL {
            let b = baseline_cost(&[LayerSpec::new(n, m, 2 * m, heads).unwrap()], arch, &costs).unwrap();
            prop_assert_eq!(b.area_mm2, b.area_breakdown_mm2.values().sum::<f64>());
            prop_assert_eq!(b.energy_mj, b.energy_breakdown_mj.values().sum::<f64>());
        }
    }

    #[test]
    fn slope_dominance(cell_scale in 0.1f64..10.0, dac_scale in 0.5f64..2.0) {
        let mut costs = ComponentCosts::default();
        costs.dense_cell.area_um2 *= cell_scale;
        costs.memristor_cell.area_um2 *= cell_scale;
        for d in &mut costs.dac {
            d.area_um2 *= dac_scale;
        }
        let hw = Hardware::default();
        let params = [1_500_000_000u64, 11_000_000_000, 65_000_000_000, GPT3_PARAMS];
        let rows = scaling_sweep(&params, &BaselineArch::ALL, &hw, &costs).unwrap();
        let series = |name: &str| -> Vec<f64> {
            rows.iter().filter(|r| r.architecture == name).map(|r| r.area_mm2).collect()
        };
        let ours = series("proposed");
        for arch in BaselineArch::ALL {
            let theirs = series(arch.key());
            for i in 1..params.len() {
                let dp = (params[i] - params[i - 1]) as f64;
                let s_ours = (ours[i] - ours[i - 1]) / dp;
                let s_theirs = (theirs[i] - theirs[i - 1]) / dp;
                prop_assert!(s_ours > 0.0 && theirs[i] > theirs[i - 1]);
                prop_assert!(s_ours < s_theirs, "{} slope {} vs {}", arch.key(), s_ours, s_theirs);
            }
        }
    }
}
