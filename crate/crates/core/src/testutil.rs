use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{Instance, ReferenceSettings, ServerSpec};

pub fn server(id: &str, rate: f64, capability: f64) -> ServerSpec {
    ServerSpec {
        id: id.into(),
        rate,
        capability,
    }
}

/// Reference device and task with the given fleet, `alpha = 20`, no deadline.
pub fn reference_instance(servers: Vec<ServerSpec>, m: usize) -> Instance {
    let d = ReferenceSettings::default();
    Instance {
        task: d.task(None),
        device: d.device.clone(),
        servers,
        alpha: 20.0,
        m,
    }
}

/// Fleet drawn from the experimental rate and capability ranges.
pub fn random_fleet(n: usize, seed: u64) -> Vec<ServerSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            server(
                &format!("s{}", i + 1),
                rng.random_range(1e8..1e9),
                rng.random_range(1e9..4e9),
            )
        })
        .collect()
}
