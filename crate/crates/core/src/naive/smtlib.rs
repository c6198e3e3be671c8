//! SMT-LIB2 text for a [`NaiveEncoding`].

use std::fmt::Write as _;

use num_bigint::BigInt;

use super::{Formula, LinExpr, NaiveEncoding};

/// Exact SMT-LIB2 real literal for a finite `f64`.
///
/// Every finite double is a dyadic rational, so the output is either a
/// decimal integer like `3.0` or a quotient `(/ 5.0 8.0)`, negated with
/// `(- ...)` when needed.
pub fn format_rational(v: f64) -> String {
    assert!(v.is_finite(), "non-finite constant in encoding");
    if v == 0.0 {
        return "0.0".to_string();
    }
    let bits = v.abs().to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (mut mantissa, mut exp) = if exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), exp - 1075)
    };
    let tz = mantissa.trailing_zeros() as i64;
    mantissa >>= tz;
    exp += tz;
    let body = if exp >= 0 {
        format!("{}.0", BigInt::from(mantissa) << exp as usize)
    } else {
        format!("(/ {mantissa}.0 {}.0)", BigInt::from(1u8) << (-exp) as usize)
    };
    if v < 0.0 {
        format!("(- {body})")
    } else {
        body
    }
}

fn write_expr(out: &mut String, enc: &NaiveEncoding, e: &LinExpr) {
    let mut parts: Vec<String> = e
        .terms
        .iter()
        .map(|&(v, c)| {
            if c == 1.0 {
                enc.name(v).to_string()
            } else {
                format!("(* {} {})", format_rational(c), enc.name(v))
            }
        })
        .collect();
    if e.constant != 0.0 || parts.is_empty() {
        parts.push(format_rational(e.constant));
    }
    if parts.len() == 1 {
        out.push_str(&parts[0]);
    } else {
        let _ = write!(out, "(+ {})", parts.join(" "));
    }
}

fn write_formula(out: &mut String, enc: &NaiveEncoding, f: &Formula) {
    match f {
        Formula::Atom(e, rel) => {
            let _ = write!(out, "({} ", rel.symbol());
            write_expr(out, enc, e);
            out.push_str(" 0.0)");
        }
        Formula::Relu { out: v, input } => {
            let _ = write!(out, "(= {} (ite (>= ", enc.name(*v));
            write_expr(out, enc, input);
            out.push_str(" 0.0) ");
            write_expr(out, enc, input);
            out.push_str(" 0.0))");
        }
        Formula::And(fs) | Formula::Or(fs) => {
            let op = if matches!(f, Formula::And(_)) { "and" } else { "or" };
            match fs.len() {
                0 => out.push_str(if op == "and" { "true" } else { "false" }),
                1 => write_formula(out, enc, &fs[0]),
                _ => {
                    let _ = write!(out, "({op}");
                    for g in fs {
                        out.push(' ');
                        write_formula(out, enc, g);
                    }
                    out.push(')');
                }
            }
        }
    }
}

/// Renders the encoding as a QF_LRA script ending in `(check-sat)` and
/// `(get-model)`. The output depends only on the encoding.
pub fn emit_smtlib(enc: &NaiveEncoding) -> String {
    let mut out = String::new();
    out.push_str("(set-logic QF_LRA)\n(set-option :produce-models true)\n");
    for name in enc.variables() {
        let _ = writeln!(out, "(declare-fun {name} () Real)");
    }
    let sections: [(&str, &[Formula]); 4] = [
        ("position bounds", &enc.position),
        ("occluded pixels", &enc.pixels),
        ("network", &enc.network),
        ("label", std::slice::from_ref(&enc.label)),
    ];
    for (title, fs) in sections {
        let _ = writeln!(out, "; {title}");
        for f in fs {
            out.push_str("(assert ");
            write_formula(&mut out, enc, f);
            out.push_str(")\n");
        }
    }
    out.push_str("(check-sat)\n(get-model)\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rationals_are_exact() {
        assert_eq!(format_rational(3.0), "3.0");
        assert_eq!(format_rational(0.625), "(/ 5.0 8.0)");
        assert_eq!(format_rational(-0.5), "(- (/ 1.0 2.0))");
        assert_eq!(format_rational(0.0), "0.0");
        assert_eq!(format_rational(1024.0), "1024.0");
        // 0.1 is not a short decimal in binary
        assert_eq!(format_rational(0.1), "(/ 3602879701896397.0 36028797018963968.0)");
    }
}
