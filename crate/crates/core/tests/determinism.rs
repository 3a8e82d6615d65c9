use varwave::goursat::{march, march_sequential, seed_lattice, SolverOptions, StoreAll};
use varwave::initial_data::{boundary_curve_for_spacing, CauchyData, Profile};
use varwave::wavespeed::make_model;

#[test]
fn parallel_and_sequential_marches_agree_bitwise() {
    let model = make_model("cosine", &[2.0, 1.0], (-5.0, 5.0)).unwrap();
    let data = CauchyData::new(
        Profile::named("sine-packet", &[0.8, 0.0, 1.0, 3.0]).unwrap(),
        Profile::named("gaussian", &[0.3, 0.5, 0.7]).unwrap(),
        2e-3,
    )
    .unwrap();
    let h = 1.0 / 32.0;
    let opts = SolverOptions::new(h, 1.5);
    let gamma = boundary_curve_for_spacing(&data, &model, h).unwrap();
    let lattice = seed_lattice(&gamma, h, &opts.tails(&model)).unwrap();
    let (mut a, mut b) = (StoreAll::default(), StoreAll::default());
    let sa = march(&lattice, &model, &opts, &mut a).unwrap();
    let sb = march_sequential(&lattice, &model, &opts, &mut b).unwrap();
    assert_eq!(sa, sb);
    assert_eq!(a.diagonals.len(), b.diagonals.len());
    for (da, db) in a.diagonals.iter().zip(&b.diagonals) {
        assert_eq!(da.offset, db.offset);
        for (na, nb) in da.nodes.iter().zip(&db.nodes) {
            let bits = |n: &Option<varwave::goursat::NodeState>| {
                n.map(|s| [s.u, s.x, s.t, s.p, s.q, s.nu, s.eta, s.xi, s.zeta].map(f64::to_bits))
            };
            assert_eq!(bits(na), bits(nb));
        }
    }
}
