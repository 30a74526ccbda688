//! Byte-stable report formatting: six significant digits everywhere, plain
//! aligned text tables for humans, JSON for machines.

/// Format with six significant digits. Values whose magnitude fits in
/// `[1e-4, 1e6)` print in positional notation; everything else uses
/// scientific notation. Zero prints as `0.00000`.
pub fn sig6(v: f64) -> String {
    if v == 0.0 {
        return "0.00000".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let mag = v.abs().log10().floor() as i32;
    if (-4..6).contains(&mag) {
        let decimals = (5 - mag).max(0) as usize;
        format!("{v:.decimals$}")
    } else {
        format!("{v:.5e}")
    }
}

/// Render rows as an aligned table; every column is padded to its widest
/// cell, separated by two spaces.
pub fn aligned_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let ncols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate().take(ncols) {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let fmt_row = |cells: &[String]| -> String {
        let mut line = String::new();
        for (i, cell) in cells.iter().enumerate().take(ncols) {
            if i > 0 {
                line.push_str("  ");
            }
            line.push_str(&format!("{cell:<width$}", width = widths[i]));
        }
        line.trim_end().to_string()
    };
    let mut out = String::new();
    out.push_str(&fmt_row(
        &header.iter().map(|h| h.to_string()).collect::<Vec<_>>(),
    ));
    out.push('\n');
    let rule: usize = widths.iter().sum::<usize>() + 2 * (ncols - 1);
    out.push_str(&"-".repeat(rule));
    out.push('\n');
    for row in rows {
        out.push_str(&fmt_row(row));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig6_covers_magnitudes() {
        assert_eq!(sig6(0.0), "0.00000");
        assert_eq!(sig6(1.0), "1.00000");
        assert_eq!(sig6(127.5), "127.500");
        assert_eq!(sig6(0.00164523), "0.00164523");
        assert_eq!(sig6(123456.7), "123457");
        assert_eq!(sig6(1.23456789e-8), "1.23457e-8");
        assert_eq!(sig6(-0.5), "-0.500000");
    }

    #[test]
    fn table_is_byte_stable() {
        let rows = vec![
            vec!["EGS".to_string(), sig6(0.00123)],
            vec!["GSE".to_string(), sig6(4.0)],
        ];
        let a = aligned_table(&["order", "loss"], &rows);
        let b = aligned_table(&["order", "loss"], &rows);
        assert_eq!(a, b);
        assert!(a.contains("EGS"));
        assert!(a.lines().count() == 4);
    }
}
