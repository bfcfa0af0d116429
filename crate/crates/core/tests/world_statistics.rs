//! Monte-Carlo checks of the attribute distribution's associations.

use latent_clan::numerics::{correlation, dot, Rng};
use latent_clan::toy_world::attr::*;
use latent_clan::toy_world::WorldSpec;

#[test]
fn attribute_correlations() {
    let world = WorldSpec::faces(0).unwrap();
    let mut rng = Rng::new(2024);
    let mut cols: Vec<Vec<f64>> = (0..8).map(|_| Vec::with_capacity(100_000)).collect();
    for _ in 0..100_000 {
        let s = world.sample_attributes(&mut rng);
        for (k, v) in s.values.iter().enumerate() {
            cols[k].push(*v);
        }
        for (k, st) in s.style.iter().enumerate() {
            assert!(dot(st, &world.directions[k]).abs() < 1e-6);
        }
    }
    let age_beard = correlation(&cols[AGE], &cols[BEARD]);
    let age_hair = correlation(&cols[AGE], &cols[HAIR_LENGTH]);
    let glasses_smile = correlation(&cols[GLASSES], &cols[SMILE]);
    assert!((0.40..=0.62).contains(&age_beard), "age/beard {age_beard}");
    assert!(age_hair < -0.3, "age/hair_length {age_hair}");
    assert!(glasses_smile.abs() <= 0.05, "glasses/smile {glasses_smile}");
    assert!(cols.iter().flatten().all(|a| a.abs() <= 1.0));
}
