//! CSV encoding shared by trajectories, sources and experiment artifacts.

use std::io::Write;

use crate::linalg::CVector;

/// Seventeen significant digits, exactly reproducible across runs.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Header `t, coefficient_0, …` with `_im` columns appended when any vector
/// has a nonzero imaginary part.
pub fn coefficient_header(first: &str, vectors: &[CVector]) -> (Vec<String>, bool) {
    let n = vectors.first().map_or(0, |v| v.len());
    let complex = vectors.iter().any(|v| v.iter().any(|z| z.im != 0.0));
    let mut header = vec![first.to_string()];
    header.extend((0..n).map(|j| format!("coefficient_{j}")));
    if complex {
        header.extend((0..n).map(|j| format!("coefficient_{j}_im")));
    }
    (header, complex)
}

/// Writes one row per time node.
pub fn write_coefficient_csv<W: Write>(out: W, times: &[f64], vectors: &[CVector]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let (header, complex) = coefficient_header("t", vectors);
    w.write_record(&header)?;
    for (t, v) in times.iter().zip(vectors) {
        let mut row = vec![fmt_f64(*t)];
        row.extend(v.iter().map(|z| fmt_f64(z.re)));
        if complex {
            row.extend(v.iter().map(|z| fmt_f64(z.im)));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
