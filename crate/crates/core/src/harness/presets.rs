//! Built-in scenarios on the three-agent path network.
//!
//! Initial positions and velocities are seeded uniform draws from `[−5, 5]`
//! with the recorded seed; integral states start at zero.

use super::scenario::{
    Algorithm, CostSpec, DesignSpec, Diagnostics, GainSpec, GraphSpec, InitialSpec, ScenarioConfig, ScenarioError,
    TriggerSpec, SCHEMA_VERSION,
};

pub const PRESET_NAMES: [&str; 4] = ["scenario1", "scenario2", "scenario3", "heavy-ball"];

/// Seed used by every seeded preset.
pub const PRESET_SEED: u64 = 1;

pub const A1: [[f64; 3]; 3] = [[2.0, -1.0, -1.0], [-1.0, 1.5, -0.5], [-1.0, -0.5, 1.5]];
pub const A2: [[f64; 3]; 3] = [[3.0, -3.0, 0.0], [-3.0, 4.0, -1.0], [0.0, -1.0, 1.0]];
pub const A3: [[f64; 3]; 3] = [[2.5, 0.0, -2.5], [0.0, 10.0, -10.0], [-2.5, -10.0, 12.5]];

pub const LINEAR_A: [[f64; 3]; 3] = [
    [0.6132, -0.5278, 1.2416],
    [-0.1576, -1.3736, 0.8708],
    [-1.5685, -1.8443, 0.2884],
];

pub const QUARTIC_B: [[f64; 3]; 3] = [[0.0, 0.0, 0.0], [2.5, 2.0, 3.0], [-3.5, -2.7, -1.0]];

pub const C1: [[f64; 3]; 3] = [
    [4.7471, 1.2843, 0.5836],
    [1.2843, 5.0861, -2.4209],
    [0.5836, -2.4209, 2.2270],
];
pub const C2: [[f64; 3]; 3] = [
    [1.3528, 0.5141, -2.1684],
    [0.5141, 1.2333, -0.5857],
    [-2.1684, -0.5857, 4.0361],
];
pub const C3: [[f64; 3]; 3] = [
    [1.0223, 1.2630, -0.4907],
    [1.2630, 2.1391, -0.1378],
    [-0.4907, -0.1378, 0.7207],
];

fn rows(m: &[[f64; 3]; 3]) -> Vec<Vec<f64>> {
    m.iter().map(|r| r.to_vec()).collect()
}

fn path3() -> GraphSpec {
    GraphSpec {
        n: 3,
        edges: vec![(0, 1, 1.0), (1, 2, 1.0)],
        index_base: 0,
    }
}

fn base(name: &str, costs: Vec<CostSpec>, theta: f64, horizon: f64) -> ScenarioConfig {
    ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        name: Some(name.into()),
        graph: path3(),
        costs,
        gains: GainSpec {
            alpha: 2.0,
            beta: 2.0,
            gamma: 6.0,
            theta,
        },
        algorithm: Algorithm::Continuous,
        trigger: None,
        step: 0.01,
        horizon,
        initial: InitialSpec::SeededBox {
            seed: PRESET_SEED,
            lo: -5.0,
            hi: 5.0,
        },
        diagnostics: Diagnostics::default(),
        design: DesignSpec::default(),
    }
}

/// Convex but not strongly convex quadratics `½(x − aᵢ)ᵀAᵢ(x − aᵢ)`.
pub fn scenario1() -> ScenarioConfig {
    let costs = [A1, A2, A3]
        .iter()
        .zip(LINEAR_A)
        .map(|(a, c)| CostSpec::Quadratic {
            hessian: rows(a),
            center: c.to_vec(),
        })
        .collect();
    base("scenario1", costs, 5.0, 100.0)
}

/// Quartics `‖x − bᵢ‖⁴`: merely convex each, strongly convex in sum.
pub fn scenario2() -> ScenarioConfig {
    let costs = QUARTIC_B
        .iter()
        .map(|b| CostSpec::Quartic {
            center: b.to_vec(),
            lipschitz: None,
        })
        .collect();
    base("scenario2", costs, 5.0, 100.0)
}

/// Strongly convex quadratics `½xᵀCᵢx + aᵢᵀx`, event mode available.
pub fn scenario3() -> ScenarioConfig {
    let costs = [C1, C2, C3]
        .iter()
        .zip(LINEAR_A)
        .map(|(c, a)| CostSpec::QuadraticLinear {
            hessian: rows(c),
            linear: a.to_vec(),
        })
        .collect();
    let mut cfg = base("scenario3", costs, 3.5, 50.0);
    cfg.trigger = Some(TriggerSpec::default());
    cfg
}

/// One agent with `f(x) = ½x²`: the dynamics reduce to `ẍ + γẋ + αx = 0`.
pub fn heavy_ball() -> ScenarioConfig {
    ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        name: Some("heavy-ball".into()),
        graph: GraphSpec {
            n: 1,
            edges: vec![],
            index_base: 0,
        },
        costs: vec![CostSpec::Quadratic {
            hessian: vec![vec![1.0]],
            center: vec![0.0],
        }],
        gains: GainSpec {
            alpha: 2.0,
            beta: 1.0,
            gamma: 6.0,
            theta: 1.0,
        },
        algorithm: Algorithm::Continuous,
        trigger: None,
        step: 0.01,
        horizon: 10.0,
        initial: InitialSpec::Literal {
            x: vec![vec![1.0]],
            y: vec![vec![0.0]],
            v: None,
        },
        diagnostics: Diagnostics {
            lyapunov: false,
            constants: false,
            rate_fit: false,
        },
        design: DesignSpec::default(),
    }
}

pub fn preset(name: &str) -> Result<ScenarioConfig, ScenarioError> {
    match name {
        "scenario1" => Ok(scenario1()),
        "scenario2" => Ok(scenario2()),
        "scenario3" => Ok(scenario3()),
        "heavy-ball" => Ok(heavy_ball()),
        other => Err(ScenarioError::UnknownPreset(other.into())),
    }
}
