//! Gantt renderings of a timeline: one row per stage.

use std::fmt::Write as _;
use std::str::FromStr;

use pipesim::{TaskKind, Timeline, Q};

use crate::error::CliError;

/// Horizontal SVG scale.
pub const PX_PER_UNIT: i64 = 10;
const LEFT: i64 = 48;
const TOP: i64 = 24;
const ROW: i64 = 24;
const BAR: i64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Svg,
    Text,
}

impl FromStr for Format {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Format, CliError> {
        match s {
            "svg" => Ok(Format::Svg),
            "text" | "txt" => Ok(Format::Text),
            _ => Err(CliError::Usage(format!(
                "unknown format {s:?} (expected svg or text)"
            ))),
        }
    }
}

pub fn render(tl: &Timeline, format: Format) -> Result<String, CliError> {
    match format {
        Format::Svg => render_svg(tl),
        Format::Text => render_text(tl),
    }
}

fn nonempty(tl: &Timeline) -> Result<(), CliError> {
    if tl.entries.is_empty() || tl.total_time.is_zero() {
        Err(CliError::Usage("timeline is empty".to_string()))
    } else {
        Ok(())
    }
}

fn glyph(kind: TaskKind, chunk: u32) -> char {
    let c = kind.letter();
    if chunk.is_multiple_of(2) {
        c.to_ascii_lowercase()
    } else {
        c
    }
}

/// One character column per T_unit; uppercase for odd chunks, lowercase for
/// even chunks, `.` for idle.
pub fn render_text(tl: &Timeline) -> Result<String, CliError> {
    nonempty(tl)?;
    let cols = (tl.total_time / tl.t_unit).ceil() as usize;
    let mut out = String::new();
    let mut ruler = String::from("     ");
    for c in 0..cols {
        ruler.push(if c % 10 == 0 { '|' } else { ' ' });
    }
    out.push_str(ruler.trim_end());
    out.push('\n');
    for s in 0..tl.p {
        let mut row = vec!['.'; cols];
        for e in tl.stage(s) {
            let a = (e.start / tl.t_unit).floor().max(0) as usize;
            let b = ((e.end / tl.t_unit).ceil() as usize).min(cols);
            for cell in row.iter_mut().take(b).skip(a) {
                *cell = glyph(e.id.kind, e.id.chunk);
            }
        }
        let _ = writeln!(out, "S{s:<3} {}", row.into_iter().collect::<String>());
    }
    let _ = writeln!(
        out,
        "legend: F/f forward, B/b backward, R/r recompute (upper = odd chunk, lower = even chunk), . idle; 1 column = {} time",
        tl.t_unit
    );
    Ok(out)
}

fn px(q: Q) -> String {
    if q.is_integer() {
        q.to_string()
    } else {
        let s = format!("{:.3}", q.to_f64());
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn fill(kind: TaskKind, chunk: u32) -> &'static str {
    const FWD: [&str; 4] = ["#4e79a7", "#a0cbe8", "#76b7b2", "#2f4b7c"];
    const BWD: [&str; 4] = ["#e15759", "#ff9d9a", "#f28e2b", "#b07aa1"];
    let k = ((chunk.max(1) - 1) % 4) as usize;
    match kind {
        TaskKind::Forward => FWD[k],
        TaskKind::Backward => BWD[k],
        TaskKind::Recompute => "url(#hatch)",
        _ => "#bab0ac",
    }
}

/// SVG Gantt chart at a fixed scale of ten pixels per T_unit.
pub fn render_svg(tl: &Timeline) -> Result<String, CliError> {
    nonempty(tl)?;
    let scale = |t: Q| t / tl.t_unit * PX_PER_UNIT;
    let width = scale(tl.total_time) + LEFT + 16;
    let height = TOP + ROW * i64::from(tl.p) + 24;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" font-family="monospace" font-size="9">"#,
        px(width)
    );
    s.push_str(
        r##"<defs><pattern id="hatch" width="4" height="4" patternUnits="userSpaceOnUse" patternTransform="rotate(45)"><rect width="4" height="4" fill="#f1ce63"/><line x1="0" y1="0" x2="0" y2="4" stroke="#8c6d1f" stroke-width="1.5"/></pattern></defs>
"##,
    );
    let _ = writeln!(
        s,
        r#"<text x="{LEFT}" y="14" font-size="11">{} p={} v={} m={} total={}</text>"#,
        tl.strategy,
        tl.p,
        tl.v,
        tl.m,
        px(tl.total_time / tl.t_unit)
    );
    let units = (tl.total_time / tl.t_unit).ceil();
    for u in (0..=units).step_by(10) {
        let x = LEFT + u * PX_PER_UNIT;
        let _ = writeln!(
            s,
            r##"<line x1="{x}" y1="{TOP}" x2="{x}" y2="{}" stroke="#dddddd"/>"##,
            TOP + ROW * i64::from(tl.p)
        );
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}">{u}</text>"#,
            TOP + ROW * i64::from(tl.p) + 12
        );
    }
    for st in 0..tl.p {
        let y = TOP + ROW * i64::from(st);
        let _ = writeln!(s, r#"<text x="4" y="{}">S{st}</text>"#, y + 14);
        for e in tl.stage(st) {
            let x = scale(e.start) + LEFT;
            let w = scale(e.end - e.start);
            let _ = writeln!(
                s,
                r##"<rect x="{}" y="{}" width="{}" height="{BAR}" fill="{}" stroke="#333333" stroke-width="0.5"><title>{}</title></rect>"##,
                px(x),
                y + 2,
                px(w),
                fill(e.id.kind, e.id.chunk),
                e.id
            );
            if w >= Q::int(PX_PER_UNIT) {
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
                    px(x + w / 2),
                    y + 15,
                    e.id.microbatch
                );
            }
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}
