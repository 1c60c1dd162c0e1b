use std::time::Instant;

use rpcbf::lab::{sweep_safe_region, ExperimentConfig, GridDim};

fn di_config(method: &str, alpha: f64, mode: &str) -> ExperimentConfig {
    let n = if method == "pcbf" { 1 } else { 100 };
    ExperimentConfig::from_json(&format!(
        r#"{{
        "system": {{"kind": "double_integrator", "mass_range": [0.8, 1.2], "position_bound": 1.0}},
        "policy": {{"kind": "braking"}},
        "nominal": {{"kind": "constant", "value": [0.0]}},
        "value": {{"horizon": 6.4, "dt": 0.1, "num_samples": {n}}},
        "filter": {{"alpha": {alpha}, "method": "{method}", "mode": "{mode}"}}
    }}"#
    ))
    .unwrap()
}

fn main() {
    let method = std::env::args().nth(1).unwrap_or_else(|| "rpcbf".into());
    let mode = std::env::args().nth(2).unwrap_or_else(|| "worst_vertex".into());
    let dims = vec![
        GridDim::Swept {
            lo: -1.5,
            hi: 1.5,
            count: 20,
        },
        GridDim::Swept {
            lo: -1.5,
            hi: 1.5,
            count: 20,
        },
    ];
    let exp = di_config(&method, 1.0, &mode).build(Some(42)).unwrap();
    let t0 = Instant::now();
    let sweep = sweep_safe_region(&exp, &dims, 15.0, 25).unwrap();
    let inside: Vec<usize> = (0..sweep.values.len())
        .filter(|&c| sweep.values[c] <= 0.0)
        .collect();
    let unsafe_inside: Vec<usize> = inside
        .iter()
        .copied()
        .filter(|&c| !sweep.safe[c])
        .collect();
    println!(
        "{method}/{mode}: {:.1} s, {} inside, {} unsafe inside, {} errors",
        t0.elapsed().as_secs_f64(),
        inside.len(),
        unsafe_inside.len(),
        sweep.errors.len()
    );
    for &c in unsafe_inside.iter().take(10) {
        let i = c / 20;
        let j = c % 20;
        let x = sweep.grid.state(i, j);
        println!("  unsafe inside ({:.3}, {:.3}) V={:+.4}", x[0], x[1], sweep.values[c]);
    }
}
