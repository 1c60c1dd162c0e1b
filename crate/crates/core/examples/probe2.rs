use rpcbf::lab::{sweep_filter_boundary, sweep_safe_region, ExperimentConfig, GridDim};

fn segway_config(horizon: f64, gains: &[f64; 4], alpha: f64) -> ExperimentConfig {
    ExperimentConfig::from_json(&format!(
        r#"{{
        "system": {{"kind": "segway", "overrides": {{
            "frame_mass": 3.0, "com_length": 2.0, "wheel_radius": 0.5, "torque_bound": 3.0}}}},
        "policy": {{"kind": "saturating_linear", "gains": [[{}, {}, {}, {}]]}},
        "nominal": {{"kind": "constant", "value": [3.0]}},
        "value": {{"horizon": {horizon}, "dt": 0.05, "num_samples": 1}},
        "filter": {{"alpha": {alpha}, "method": "pcbf"}},
        "experiment": {{"control_dt": 0.02}}
    }}"#,
        gains[0], gains[1], gains[2], gains[3]
    ))
    .unwrap()
}

fn main() {
    let dims = vec![
        GridDim::Swept { lo: -2.5, hi: 2.5, count: 30 },
        GridDim::Swept { lo: -1.2, hi: 1.2, count: 30 },
        GridDim::Fixed { fixed: 0.0 },
        GridDim::Fixed { fixed: 0.0 },
    ];
    let coarse = vec![
        GridDim::Swept { lo: -2.2, hi: 2.2, count: 15 },
        GridDim::Swept { lo: -0.45, hi: 0.45, count: 15 },
        GridDim::Fixed { fixed: 0.0 },
        GridDim::Fixed { fixed: 0.0 },
    ];
    for gains in [
        [-0.05f64, -27.18, -0.35, -11.53],
    ] {
        for alpha in [0.05] {
            let mut counts = Vec::new();
            for horizon in [5.0, 10.0, 20.0, 30.0] {
                let exp = segway_config(horizon, &gains, alpha).build(Some(0)).unwrap();
                counts.push(sweep_filter_boundary(&exp, &dims).unwrap().sublevel_count());
            }
            let exp5 = segway_config(5.0, &gains, alpha).build(Some(0)).unwrap();
            let exp20 = segway_config(20.0, &gains, alpha).build(Some(0)).unwrap();
            let s5 = sweep_safe_region(&exp5, &coarse, 30.0, 1).unwrap();
            let s20 = sweep_safe_region(&exp20, &coarse, 30.0, 1).unwrap();
            let safe5 = s5.safe.iter().filter(|s| **s).count();
            let safe20 = s20.safe.iter().filter(|s| **s).count();
            let leaky20 = (0..s20.safe.len())
                .filter(|&c| s20.values[c] <= 0.0 && !s20.safe[c])
                .count();
            let marked: Vec<usize> = (0..s5.safe.len())
                .filter(|&c| s20.safe[c] && !s5.safe[c] && s5.values[c] <= 0.0)
                .collect();
            println!(
                "gains {gains:?} alpha {alpha}: counts {counts:?} safe5 {safe5} safe20 {safe20} leaky20 {leaky20} marked {}",
                marked.len()
            );
            for &c in marked.iter().take(5) {
                let x = s5.grid.state(c / 15, c % 15);
                println!(
                    "   marked p={:+.3} th={:+.3} V5={:+.3} V20={:+.3}",
                    x[0],
                    x[1],
                    s5.values[c],
                    s20.values[c]
                );
            }
        }
    }
}
