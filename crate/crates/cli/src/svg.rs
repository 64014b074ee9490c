use std::fmt::Write;

const CELL_W: f64 = 96.0;
const CELL_H: f64 = 28.0;
const LEFT: f64 = 170.0;
const TOP: f64 = 70.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Interpolates red (0, worse) through white to blue (1, better).
pub fn colour(norm: f64) -> String {
    if !norm.is_finite() {
        return "#cccccc".into();
    }
    let t = norm.clamp(0.0, 1.0);
    let (r, g, b) = if t < 0.5 {
        let u = t / 0.5;
        (
            214.0 + (255.0 - 214.0) * u,
            39.0 + (255.0 - 39.0) * u,
            40.0 + (255.0 - 40.0) * u,
        )
    } else {
        let u = (t - 0.5) / 0.5;
        (
            255.0 - (255.0 - 31.0) * u,
            255.0 - (255.0 - 119.0) * u,
            255.0 - (255.0 - 180.0) * u,
        )
    };
    format!(
        "#{:02x}{:02x}{:02x}",
        r.round() as u8,
        g.round() as u8,
        b.round() as u8
    )
}

fn label(v: f64) -> String {
    if v.is_nan() {
        "n/a".into()
    } else {
        format!("{v:.3}")
    }
}

/// Cells are coloured by the
/// normalised value and annotated with the raw one.
pub fn heatmap(
    title: &str,
    rows: &[String],
    cols: &[String],
    cells: &[Vec<(f64, f64)>],
    legend: &str,
) -> String {
    let width = LEFT + CELL_W * cols.len() as f64 + 20.0;
    let height = TOP + CELL_H * rows.len() as f64 + 40.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="10" y="22" font-size="15">{}</text>"#,
        escape(title)
    );
    for (c, name) in cols.iter().enumerate() {
        let x = LEFT + CELL_W * (c as f64 + 0.5);
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#,
            TOP - 10.0,
            escape(name)
        );
    }
    for (r, name) in rows.iter().enumerate() {
        let y = TOP + CELL_H * r as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LEFT - 8.0,
            y + CELL_H * 0.65,
            escape(name)
        );
        for (c, &(value, norm)) in cells[r].iter().enumerate() {
            let x = LEFT + CELL_W * c as f64;
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="{}" stroke="#ffffff"/>"##,
                colour(norm)
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
                x + CELL_W / 2.0,
                y + CELL_H * 0.65,
                label(value)
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="10" y="{}" font-size="11">{}</text>"#,
        height - 12.0,
        escape(legend)
    );
    s.push_str("</svg>\n");
    s
}
