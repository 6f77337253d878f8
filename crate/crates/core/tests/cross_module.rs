use brw_core::analysis::solve_tstar;
use brw_core::models::Law;
use brw_core::oracle::{exact_path_survival, LatticeLaw};
use brw_core::simulate::{estimate_m_kappa, estimate_rho, simulate_g, BarrierSpec, GwEmbedParams};
use brw_core::spine::{exact_lhs, make_spine, many_to_one_check, Functional};
use brw_core::stats::binomial_stderr;
use brw_core::transform::make_vlaw;

#[test]
fn mc_survival_matches_oracle() {
    let law = Law::binary_bernoulli(0.3).unwrap();
    let prof = solve_tstar(&law).unwrap();
    let vlaw = make_vlaw(&law, &prof).unwrap();
    let ll = LatticeLaw::from_law(&law).unwrap();
    for (slope, n) in [(0.1, 10), (0.05, 8), (0.3, 6)] {
        let b = BarrierSpec::v(slope);
        let exact = exact_path_survival(&ll, &b, &prof, n).unwrap();
        let est = estimate_rho(&vlaw, &b, n, 50_000, None, 2024, 0).unwrap();
        assert!((est.p_hat - exact).abs() < 3.0 * binomial_stderr(exact, 50_000), "{slope} {n}: {} vs {exact}", est.p_hat);
    }
}

#[test]
fn many_to_one_exact_in_both_intervals() {
    let law = Law::binary_bernoulli(0.3).unwrap();
    let prof = solve_tstar(&law).unwrap();
    let vlaw = make_vlaw(&law, &prof).unwrap();
    let sp = make_spine(&vlaw);
    let f = Functional::below_line(0.5);
    let rep = many_to_one_check(&sp, 4, &f, 40_000, 8).unwrap();
    let exact = exact_lhs(&law, &vlaw, 4, &f).unwrap();
    assert_eq!(rep.exact, Some(exact));
    assert!(rep.pass(), "{rep:?}");
}

#[test]
fn embedded_tree_lower_bound() {
    let law = Law::binary_bernoulli(0.3).unwrap();
    let prof = solve_tstar(&law).unwrap();
    let vlaw = make_vlaw(&law, &prof).unwrap();
    let ll = LatticeLaw::from_law(&law).unwrap();
    let mk = estimate_m_kappa(&vlaw, 10, 2_000, 3).unwrap();
    let (n, alpha, eps) = (12, 0.5, 0.45);
    let l = GwEmbedParams::smallest_l(n, eps, alpha, mk.m).unwrap();
    let params = GwEmbedParams { n, eps, alpha, l, m: mk.m };
    let hist = simulate_g(&vlaw, &params, 5_000, 4).unwrap();
    let rho = exact_path_survival(&ll, &BarrierSpec::v(alpha * eps), &prof, n).unwrap();
    let p = hist.p_nonempty();
    assert!(p >= 0.5 * rho - 3.0 * binomial_stderr(p, 5_000));
}
