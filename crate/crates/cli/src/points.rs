//! Parsing of interpolation point and tangent lists.

use nalgebra::{Complex, DVector};

use crate::CliError;

fn number(t: &str, what: &str) -> Result<f64, CliError> {
    t.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| CliError::Domain(format!("cannot read {what} {t:?}")))
}

/// Reads `re`, `re±imj`, or `±imj` (`i` is accepted in place of `j`).
pub fn parse_point(token: &str) -> Result<Complex<f64>, CliError> {
    let t: String = token.chars().filter(|c| !c.is_whitespace()).collect();
    let Some(body) = t.strip_suffix('j').or_else(|| t.strip_suffix('i')) else {
        return Ok(Complex::new(number(&t, "point")?, 0.0));
    };
    // split at the last sign that is not a leading sign or an exponent sign
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&k| matches!(bytes[k], b'+' | b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
    let (re, im) = match split {
        Some(k) => (number(&body[..k], "point")?, &body[k..]),
        None => (0.0, body),
    };
    let im = match im {
        "" | "+" => 1.0,
        "-" => -1.0,
        s => number(s, "point")?,
    };
    Ok(Complex::new(re, im))
}

/// Comma-separated point list; repeated values denote multiplicities.
pub fn parse_points(list: &str) -> Result<Vec<Complex<f64>>, CliError> {
    let points: Vec<Complex<f64>> = list
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(parse_point)
        .collect::<Result<_, _>>()?;
    if points.is_empty() {
        return Err(CliError::Domain("the point list is empty".into()));
    }
    Ok(points)
}

/// Tangent vectors separated by `;`, entries by `,`.
pub fn parse_tangents(list: &str) -> Result<Vec<DVector<f64>>, CliError> {
    list.split(';')
        .map(|v| {
            let xs: Vec<f64> = v
                .split(',')
                .map(|t| number(t.trim(), "tangent entry"))
                .collect::<Result<_, _>>()?;
            Ok(DVector::from_vec(xs))
        })
        .collect()
}

/// Reads a point file: tokens separated by commas, whitespace or newlines.
pub fn parse_point_file(text: &str) -> Result<Vec<Complex<f64>>, CliError> {
    let joined: Vec<&str> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split([',', ' ', '\t']))
        .filter(|t| !t.is_empty())
        .collect();
    parse_points(&joined.join(","))
}
