//! Optional bridge to an external SMT solver binary.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};

use super::{emit_smtlib, Assignment, NaiveEncoding};

/// Environment variable naming the solver executable. The solver is called as
/// `<solver> <file.smt2>` and must print `sat`, `unsat` or `unknown`, then a
/// model in `define-fun` form.
pub const SOLVER_ENV: &str = "OCC_SMT_SOLVER";

#[derive(Debug, Clone, PartialEq)]
pub enum SolverAnswer {
    Sat { model: Assignment },
    Unsat,
    Unknown(String),
    Timeout,
}

/// Solver path from [`SOLVER_ENV`], if set and non-empty.
pub fn solver_from_env() -> Option<PathBuf> {
    std::env::var_os(SOLVER_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

/// Writes the encoding to a temporary file and runs `solver` on it.
pub fn solve_external(enc: &NaiveEncoding, solver: &Path, timeout: Option<Duration>) -> Result<SolverAnswer> {
    let mut file = tempfile::Builder::new().suffix(".smt2").tempfile()?;
    std::io::Write::write_all(&mut file, emit_smtlib(enc).as_bytes())?;
    let mut child = Command::new(solver)
        .arg(file.path())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::Solver(format!("cannot start {}: {e}", solver.display())))?;

    let start = Instant::now();
    loop {
        if child.try_wait()?.is_some() {
            break;
        }
        if timeout.is_some_and(|t| start.elapsed() >= t) {
            let _ = child.kill();
            let _ = child.wait();
            return Ok(SolverAnswer::Timeout);
        }
        std::thread::sleep(Duration::from_millis(5));
    }
    let mut stdout = String::new();
    if let Some(mut out) = child.stdout.take() {
        out.read_to_string(&mut stdout)?;
    }
    parse_answer(&stdout)
}

/// Interprets solver output.
pub(crate) fn parse_answer(text: &str) -> Result<SolverAnswer> {
    let mut lines = text.lines().map(str::trim).skip_while(|l| l.is_empty());
    match lines.next() {
        Some("unsat") => Ok(SolverAnswer::Unsat),
        Some("sat") => {
            let rest: Vec<&str> = lines.collect();
            Ok(SolverAnswer::Sat {
                model: parse_model(&rest.join("\n"))?,
            })
        }
        Some("unknown") => Ok(SolverAnswer::Unknown("solver returned unknown".into())),
        Some("timeout") => Ok(SolverAnswer::Timeout),
        other => Err(Error::Solver(format!(
            "unexpected output: {}",
            other.unwrap_or("<empty>")
        ))),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

fn tokenize(text: &str) -> Vec<String> {
    text.replace('(', " ( ")
        .replace(')', " ) ")
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn parse_sexps(tokens: &[String]) -> Result<Vec<Sexp>> {
    let mut stack: Vec<Vec<Sexp>> = vec![Vec::new()];
    for t in tokens {
        match t.as_str() {
            "(" => stack.push(Vec::new()),
            ")" => {
                let list = stack
                    .pop()
                    .filter(|_| !stack.is_empty())
                    .ok_or_else(|| Error::Solver("unbalanced model".into()))?;
                stack.last_mut().expect("outer level present").push(Sexp::List(list));
            }
            atom => stack
                .last_mut()
                .expect("outer level present")
                .push(Sexp::Atom(atom.to_string())),
        }
    }
    if stack.len() != 1 {
        return Err(Error::Solver("unbalanced model".into()));
    }
    Ok(stack.pop().unwrap_or_default())
}

fn value(e: &Sexp) -> Result<f64> {
    match e {
        Sexp::Atom(s) => s
            .parse::<f64>()
            .map_err(|_| Error::Solver(format!("bad model value `{s}`"))),
        Sexp::List(items) => match items.as_slice() {
            [Sexp::Atom(op), x] if op == "-" => Ok(-value(x)?),
            [Sexp::Atom(op), x, y] if op == "/" => Ok(value(x)? / value(y)?),
            [Sexp::Atom(op), x, y] if op == "-" => Ok(value(x)? - value(y)?),
            _ => Err(Error::Solver(format!("bad model value {e:?}"))),
        },
    }
}

fn collect_defs(e: &Sexp, out: &mut Assignment) -> Result<()> {
    if let Sexp::List(items) = e {
        if let [Sexp::Atom(kw), Sexp::Atom(name), Sexp::List(args), _sort, v] = items.as_slice() {
            if kw == "define-fun" && args.is_empty() {
                out.insert(name.clone(), value(v)?);
                return Ok(());
            }
        }
        for item in items {
            collect_defs(item, out)?;
        }
    }
    Ok(())
}

/// Reads `(define-fun name () Real value)` entries.
pub(crate) fn parse_model(text: &str) -> Result<Assignment> {
    let mut model = Assignment::new();
    for e in parse_sexps(&tokenize(text))? {
        collect_defs(&e, &mut model)?;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sat_with_model() {
        let out = "sat\n(\n  (define-fun a () Real\n    2.0)\n  (define-fun xp_1_1_0 () Real\n    (/ 1.0 4.0))\n  (define-fun y_0 () Real\n    (- (/ 3.0 2.0)))\n)\n";
        match parse_answer(out).unwrap() {
            SolverAnswer::Sat { model } => {
                assert_eq!(model["a"], 2.0);
                assert_eq!(model["xp_1_1_0"], 0.25);
                assert_eq!(model["y_0"], -1.5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parses_unsat_and_garbage() {
        assert_eq!(parse_answer("unsat\n").unwrap(), SolverAnswer::Unsat);
        assert!(matches!(parse_answer("unknown"), Ok(SolverAnswer::Unknown(_))));
        assert!(parse_answer("(error \"bad\")").is_err());
        assert!(parse_model("((define-fun a () Real 1.0)").is_err());
    }
}
