use super::Expr;

fn is_const(e: &Expr, v: f64) -> bool {
    matches!(e, Expr::Const(c) if *c == v)
}

// Folding constructors. Only exact identities are applied so the derivative
// evaluates identically to the unsimplified tree wherever both are finite.

pub(super) fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if is_const(&a, 0.0) => b,
        _ if is_const(&b, 0.0) => a,
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        _ => a + b,
    }
}

pub(super) fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if is_const(&b, 0.0) => a,
        _ if is_const(&a, 0.0) => neg(b),
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
        _ => a - b,
    }
}

pub(super) fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if is_const(&a, 0.0) || is_const(&b, 0.0) => Expr::Const(0.0),
        _ if is_const(&a, 1.0) => b,
        _ if is_const(&b, 1.0) => a,
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        _ => a * b,
    }
}

pub(super) fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(inner) => *inner,
        other => -other,
    }
}

pub(super) fn differentiate(e: &Expr, var: usize) -> Expr {
    match e {
        Expr::Const(_) => Expr::Const(0.0),
        Expr::Var(i) => Expr::Const(if *i == var { 1.0 } else { 0.0 }),
        Expr::Add(a, b) => add(differentiate(a, var), differentiate(b, var)),
        Expr::Sub(a, b) => sub(differentiate(a, var), differentiate(b, var)),
        Expr::Mul(a, b) => add(
            mul(differentiate(a, var), (**b).clone()),
            mul((**a).clone(), differentiate(b, var)),
        ),
        Expr::Div(a, b) => {
            // (a'b - ab') / b^2
            let da = differentiate(a, var);
            let db = differentiate(b, var);
            if is_const(&db, 0.0) {
                if is_const(&da, 0.0) {
                    return Expr::Const(0.0);
                }
                return da / (**b).clone();
            }
            sub(mul(da, (**b).clone()), mul((**a).clone(), db)) / (**b).clone().pow(2)
        }
        Expr::Neg(a) => neg(differentiate(a, var)),
        Expr::Exp(a) => mul(differentiate(a, var), e.clone()),
        Expr::Pow(a, n) => match n {
            0 => Expr::Const(0.0),
            1 => differentiate(a, var),
            _ => {
                let inner = if *n == 2 {
                    (**a).clone()
                } else {
                    (**a).clone().pow(n - 1)
                };
                mul(mul(Expr::Const(*n as f64), inner), differentiate(a, var))
            }
        },
    }
}
