//! Symbolic differentiation with respect to `x`, and the derivative-based
//! pair verification predicate used by dataset generation and evaluation.

use crate::expr::{
    self, equivalent, normalize, BinOp, EquivalencePolicy, Expr, Leaf, UnOp,
};

/// d/dx of `e`, returned in canonical form.
///
/// The rule table covers every node kind: sum, product, and quotient rules;
/// the trig table d sin = cos, d cos = -sin, d tan = sec^2, d sec = sec*tan,
/// d csc = -csc*cot, d cot = -csc^2; d ln f = f'/f; sqrt and root(k, .)
/// through the power rule with exponents 1/2 and 1/k; and for f^g the
/// constant-exponent shortcut g*f^(g-1)*f' when g' = 0, the constant-base
/// form f^g*ln(f)*g' when f' = 0, and otherwise the general
/// f^g*(g'*ln f + g*f'/f).
pub fn differentiate(e: &Expr) -> Expr {
    normalize(&d(e))
}

fn d(e: &Expr) -> Expr {
    match e {
        Expr::Leaf(Leaf::Var) => expr::int(1),
        Expr::Leaf(_) => expr::int(0),
        Expr::Unary(op, a) => {
            let da = d(a);
            let a = (**a).clone();
            match op {
                UnOp::Minus => expr::neg(da),
                UnOp::Sin => expr::mul(expr::cos(a), da),
                UnOp::Cos => expr::neg(expr::mul(expr::sin(a), da)),
                UnOp::Tan => expr::mul(expr::pow(expr::sec(a), expr::int(2)), da),
                UnOp::Sec => expr::mul(expr::mul(expr::sec(a.clone()), expr::tan(a)), da),
                UnOp::Csc => expr::neg(expr::mul(expr::mul(expr::csc(a.clone()), expr::cot(a)), da)),
                UnOp::Cot => expr::neg(expr::mul(expr::pow(expr::csc(a), expr::int(2)), da)),
                UnOp::Ln => expr::div(da, a),
                UnOp::Sqrt => expr::div(da, expr::mul(expr::int(2), expr::sqrt(a))),
            }
        }
        Expr::Binary(op, a, b) => {
            match op {
                BinOp::Plus => expr::add(d(a), d(b)),
                BinOp::Times => expr::add(
                    expr::mul(d(a), (**b).clone()),
                    expr::mul((**a).clone(), d(b)),
                ),
                BinOp::Divide => {
                    // (f'g - fg') / g^2
                    let num = expr::add(
                        expr::mul(d(a), (**b).clone()),
                        expr::neg(expr::mul((**a).clone(), d(b))),
                    );
                    expr::div(num, expr::pow((**b).clone(), expr::int(2)))
                }
                BinOp::Power => d_power((**a).clone(), (**b).clone()),
                BinOp::Root => {
                    // root(k, u) = u^(1/k)
                    let k = (**a).clone();
                    let u = (**b).clone();
                    let exponent = expr::div(expr::int(1), k);
                    d_power(u, exponent)
                }
            }
        }
    }
}

fn d_power(f: Expr, g: Expr) -> Expr {
    let df = normalize(&d(&f));
    let dg = normalize(&d(&g));
    if dg.is_int(0) {
        // g * f^(g-1) * f'
        let gm1 = expr::add(g.clone(), expr::int(-1));
        return expr::mul(expr::mul(g, expr::pow(f, gm1)), df);
    }
    if df.is_int(0) {
        // f^g * ln(f) * g'
        return expr::mul(expr::mul(expr::pow(f.clone(), g), expr::ln(f)), dg);
    }
    // f^g * (g' ln f + g f'/f)
    let bracket = expr::add(
        expr::mul(dg, expr::ln(f.clone())),
        expr::div(expr::mul(g.clone(), df), f.clone()),
    );
    expr::mul(expr::pow(f, g), bracket)
}

/// True when differentiating `candidate_primitive` yields a function
/// equivalent to `integrand`. An inconclusive sampling verdict counts as
/// not verified.
pub fn verify_pair(integrand: &Expr, candidate_primitive: &Expr, policy: &EquivalencePolicy) -> bool {
    let derivative = differentiate(candidate_primitive);
    equivalent(&derivative, integrand, policy).unwrap_or(false)
}

/// Central finite difference of `e` in `x` at step `h`; the independent
/// oracle the derivative tests compare against.
pub fn central_difference(
    e: &Expr,
    p: expr::EvalPoint,
    h: f64,
) -> Result<f64, expr::DomainError> {
    let hi = expr::eval_numeric(e, expr::EvalPoint::new(p.x_value + h, p.n_value))?;
    let lo = expr::eval_numeric(e, expr::EvalPoint::new(p.x_value - h, p.n_value))?;
    Ok((hi - lo) / (2.0 * h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{
        add, constant_n, cos, cot, csc, div, eval_numeric, int, mul, neg, pow, sample_points, sin,
        x, EvalPoint,
    };
    use crate::fuzz::random_expr;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn derivative_of_cot() {
        let got = differentiate(&cot(x()));
        let want = normalize(&neg(pow(csc(x()), int(2))));
        assert_eq!(got, want);
    }

    #[test]
    fn derivative_of_n_times_x() {
        assert_eq!(differentiate(&mul(constant_n(), x())), constant_n());
    }

    #[test]
    fn derivative_of_x() {
        assert_eq!(differentiate(&x()), int(1));
    }

    #[test]
    fn derivative_of_cos_n_over_x() {
        // d/dx (cos^n x / x) agrees with -cos^(n-1)(x)(cos x + n x sin x)/x^2.
        let primitive = div(pow(cos(x()), constant_n()), x());
        let got = differentiate(&primitive);
        let reference = neg(div(
            mul(
                pow(cos(x()), add(constant_n(), int(-1))),
                add(cos(x()), mul(constant_n(), mul(x(), sin(x())))),
            ),
            pow(x(), int(2)),
        ));
        let policy = EquivalencePolicy::default();
        assert_eq!(equivalent(&got, &reference, &policy), Ok(true));
    }

    #[test]
    fn verify_pair_examples() {
        let policy = EquivalencePolicy::default();
        let neg_csc2 = neg(pow(csc(x()), int(2)));
        assert!(verify_pair(&neg_csc2, &cot(x()), &policy));
        assert!(verify_pair(&int(1), &x(), &policy));
        assert!(!verify_pair(&neg_csc2, &csc(x()), &policy));
    }

    #[test]
    fn derivative_of_e_to_the_x() {
        let e_x = pow(crate::expr::euler(), x());
        assert_eq!(differentiate(&e_x), e_x);
    }

    #[test]
    fn derivative_matches_central_difference() {
        let policy = EquivalencePolicy::default();
        let cases = [
            mul(x(), cos(x())),
            div(pow(crate::expr::sqrt(x()), int(3)), crate::expr::ln(x())),
            mul(crate::expr::tan(x()), pow(x(), int(2))),
            crate::expr::root(int(3), x()),
        ];
        for f in &cases {
            let df = differentiate(f);
            let mut checked = 0;
            for p in sample_points(&policy) {
                let sym = eval_numeric(&df, p);
                let fd = central_difference(f, p, 1e-5);
                if let (Ok(sym), Ok(fd)) = (sym, fd) {
                    assert!(
                        (sym - fd).abs() <= 1e-4 * (1.0 + fd.abs()),
                        "mismatch for {f} at {p:?}: {sym} vs {fd}"
                    );
                    checked += 1;
                }
            }
            assert!(checked >= 10, "too few valid points for {f}");
        }
    }

    #[test]
    fn central_difference_oracle_sanity() {
        // d/dx sin(x) = cos(x) straight from the finite-difference oracle.
        let p = EvalPoint::new(1.0, 1.0);
        let fd = central_difference(&sin(x()), p, 1e-5).unwrap();
        assert!((fd - 1.0f64.cos()).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn linearity(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_expr(&mut rng, 4);
            let g = random_expr(&mut rng, 4);
            let lhs = differentiate(&add(f.clone(), g.clone()));
            let rhs = add(differentiate(&f), differentiate(&g));
            let policy = EquivalencePolicy::default();
            if let Ok(verdict) = equivalent(&lhs, &rhs, &policy) {
                prop_assert!(verdict, "linearity failed for {} and {}", f, g);
            }
        }
    }
}
