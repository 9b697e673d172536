//! Independent oracles shared by the integration and acceptance suites.
#![allow(dead_code)]

use std::f64::consts::PI;

use formula_distill_core::expr::Token;

/// Independent recursive checker: counter discipline plus the ancestor
/// constraints, written against token spellings only.
pub fn oracle(tokens: &[Token]) -> Result<usize, String> {
    fn arity(s: &str) -> usize {
        match s {
            "+" | "-" | "*" | "/" => 2,
            "sin" | "cos" | "exp" | "log" | "sqrt" => 1,
            _ => 0,
        }
    }
    fn node(toks: &[String], pos: &mut usize, ancestors: &mut Vec<String>) -> Result<usize, String> {
        let s = toks.get(*pos).ok_or("ran out of tokens")?.clone();
        *pos += 1;
        let trig = s == "sin" || s == "cos";
        if trig && ancestors.iter().any(|a| matches!(a.as_str(), "sin" | "cos" | "log" | "sqrt")) {
            return Err(format!("{s} under a trig/log/sqrt ancestor"));
        }
        if s == "-" && matches!(ancestors.last().map(String::as_str), Some("log" | "sqrt")) {
            return Err("subtraction directly under log/sqrt".into());
        }
        let mut depth = 1;
        ancestors.push(s.clone());
        for _ in 0..arity(&s) {
            depth = depth.max(1 + node(toks, pos, ancestors)?);
        }
        ancestors.pop();
        Ok(depth)
    }
    let toks: Vec<String> = tokens.iter().map(|t| t.to_string()).collect();
    let mut pos = 0;
    let depth = node(&toks, &mut pos, &mut Vec::new())?;
    if pos != toks.len() {
        return Err(format!("{} trailing tokens", toks.len() - pos));
    }
    Ok(depth)
}

/// Running counter: starts at 1, each token adds arity − 1, hits 0 exactly at the end.
pub fn counter_ok(tokens: &[Token]) -> bool {
    let mut open: i64 = 1;
    for (i, t) in tokens.iter().enumerate() {
        open += t.arity().unwrap() as i64 - 1;
        if open < 0 || (open == 0 && i + 1 != tokens.len()) {
            return false;
        }
    }
    open == 0
}

/// Hand-written closures, transcribed from the benchmark table independently
/// of the formula parser.
pub fn closure(name: &str) -> Option<fn(&[f64]) -> f64> {
    let f: fn(&[f64]) -> f64 = match name {
        "Nguyen-1" => |x| x[0].powi(3) + x[0].powi(2) + x[0],
        "Nguyen-2" => |x| x[0].powi(4) + x[0].powi(3) + x[0].powi(2) + x[0],
        "Nguyen-3" => |x| x[0].powi(5) + x[0].powi(4) + x[0].powi(3) + x[0].powi(2) + x[0],
        "Nguyen-4" => |x| x[0].powi(6) + x[0].powi(5) + x[0].powi(4) + x[0].powi(3) + x[0].powi(2) + x[0],
        "Nguyen-5" => |x| (x[0] * x[0]).sin() * x[0].cos() - 1.0,
        "Nguyen-6" => |x| x[0].sin() + (x[0] + x[0] * x[0]).sin(),
        "Nguyen-7" => |x| (x[0] + 1.0).ln() + (x[0] * x[0] + 1.0).ln(),
        "Nguyen-8" => |x| x[0].sqrt(),
        "Nguyen-9" => |x| x[0].sin() + (x[1] * x[1]).sin(),
        "Nguyen-10" => |x| 2.0 * x[0].sin() * x[1].cos(),
        "Nguyen-11" => |x| x[0].powf(x[1]),
        "Nguyen-12" => |x| x[0].powi(4) - x[0].powi(3) + 0.5 * x[1] * x[1] - x[1],
        "Nguyen-2'" => |x| 4.0 * x[0].powi(4) + 3.0 * x[0].powi(3) + 2.0 * x[0].powi(2) + x[0],
        "Nguyen-5'" => |x| (x[0] * x[0]).sin() * x[0].cos() - 2.0,
        "Nguyen-8'" => |x| x[0].cbrt(),
        "Nguyen-8''" => |x| (x[0] * x[0]).cbrt(),
        "Nguyen-1c" | "Constant-1" => |x| 3.39 * x[0].powi(3) + 2.12 * x[0].powi(2) + 1.78 * x[0],
        "Nguyen-5c" | "Constant-2" => |x| (x[0] * x[0]).sin() * x[0].cos() - 0.75,
        "Nguyen-7c" | "Constant-8" => |x| (x[0] + 1.4).ln() + (x[0] * x[0] + 1.3).ln(),
        "Nguyen-8c" | "Constant-5" => |x| (1.23 * x[0]).sqrt(),
        "Nguyen-10c" | "Constant-3" => |x| (1.5 * x[0]).sin() * (0.5 * x[1]).cos(),
        "Constant-4" => |x| 2.7 * x[0].powf(x[1]),
        "Constant-6" => |x| x[0].powf(0.426),
        "Constant-7" => |x| 2.0 * (1.3 * x[0]).sin() * x[1].cos(),
        "Keijzer-1" => |x| 0.3 * x[0] * (2.0 * PI * x[0]).sin(),
        "Keijzer-2" => |x| 2.0 * x[0] * (0.5 * PI * x[0]).sin(),
        "Keijzer-3" => |x| 0.92 * x[0] * (2.41 * PI * x[0]).sin(),
        "Keijzer-4" => |x| {
            x[0].powi(3) * (-x[0]).exp() * x[0].cos() * x[0].sin() * x[0].sin().powi(2) * x[0].cos() - 1.0
        },
        "Keijzer-6" => |x| x[0] * (x[0] + 1.0) / 2.0,
        "Keijzer-7" => |x| x[0].ln(),
        "Keijzer-8" => |x| x[0].sqrt(),
        "Keijzer-9" => |x| (x[0] + (x[0] * x[0]).sqrt() + 1.0).ln(),
        "Keijzer-10" => |x| x[0].powf(x[1]),
        "Keijzer-11" => |x| x[0] * x[1] + ((x[0] - 1.0) * (x[1] - 1.0)).sin(),
        "Keijzer-12" => |x| x[0].powi(4) - x[0].powi(3) + x[1] * x[1] / 2.0 - x[1],
        "Keijzer-13" => |x| 6.0 * x[0].sin() * x[1].cos(),
        "Keijzer-14" => |x| 8.0 / (2.0 + x[0] * x[0] + x[1] * x[1]),
        "Keijzer-15" => |x| x[0].powi(3) / 5.0 + x[1].powi(3) / 2.0 - x[1] - x[0],
        "R1" => |x| (x[0] + 1.0).powi(3) / (x[0] * x[0] - x[0] + 1.0),
        "R2" => |x| (x[0].powi(2) - 3.0 * x[0].powi(2) + 1.0) / (x[0] * x[0] + 1.0),
        "R3" => |x| (x[0].powi(6) + x[0].powi(5)) / (x[0].powi(4) + x[0].powi(3) + x[0].powi(2) + x[0] + 1.0),
        _ => return None,
    };
    Some(f)
}
