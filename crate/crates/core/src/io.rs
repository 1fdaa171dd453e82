//! Text file formats: event CSV, threshold maps and graymap snapshots.
//!
//! Event files start with the header `t,x,y,p` followed by one row per event.
//! Timestamps use the shortest representation that parses back to the same
//! `f64`, padded with zeros to at least nine significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::SensorGeometry;
use crate::synth::{event_order, Event, EventStream, Polarity, ThresholdField};

pub const EVENT_HEADER: &str = "t,x,y,p";

/// Decimal text for `v` that round-trips exactly and carries at least
/// `min_sig` significant digits.
pub fn format_decimal(v: f64, min_sig: usize) -> String {
    let mut s = format!("{v}");
    let digits = s.bytes().filter(|b| b.is_ascii_digit()).count();
    let leading = s
        .trim_start_matches('-')
        .bytes()
        .take_while(|&b| b == b'0' || b == b'.')
        .filter(|&b| b == b'0')
        .count();
    let sig = digits.saturating_sub(leading);
    if sig < min_sig {
        if !s.contains('.') {
            s.push('.');
        }
        s.extend(std::iter::repeat_n('0', min_sig - sig));
    }
    s
}

/// Serialize a stream to the canonical event CSV text.
pub fn events_to_string(stream: &EventStream) -> String {
    let mut out = String::with_capacity(stream.events.len() * 24 + 8);
    out.push_str(EVENT_HEADER);
    out.push('\n');
    for e in &stream.events {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            format_decimal(e.t, 9),
            e.u.x,
            e.u.y,
            e.p.as_i8()
        );
    }
    out
}

pub fn write_events(stream: &EventStream, path: &Path) -> Result<()> {
    fs::write(path, events_to_string(stream))?;
    Ok(())
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Parse event CSV text. The file carries neither the sensor geometry nor the
/// observation span; `span` defaults to `[0, last event time]`.
pub fn parse_events(
    text: &str,
    geometry: SensorGeometry,
    span: Option<(f64, f64)>,
) -> Result<EventStream> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == EVENT_HEADER => {}
        _ => return Err(parse_err(1, format!("expected header `{EVENT_HEADER}`"))),
    }
    let mut events: Vec<Event> = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        let row = raw.trim();
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 4 {
            return Err(parse_err(
                line,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let t: f64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("bad timestamp `{}`", fields[0])))?;
        if !t.is_finite() || t < 0.0 {
            return Err(parse_err(
                line,
                format!("timestamp must be finite and >= 0, got {t}"),
            ));
        }
        if let Some((t0, t1)) = span {
            if t < t0 || t > t1 {
                return Err(parse_err(
                    line,
                    format!("timestamp {t} outside [{t0}, {t1}]"),
                ));
            }
        }
        let x: i64 = fields[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("bad x `{}`", fields[1])))?;
        let y: i64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("bad y `{}`", fields[2])))?;
        if !geometry.contains(x, y) {
            return Err(parse_err(
                line,
                format!(
                    "pixel ({x}, {y}) outside {}x{} sensor",
                    geometry.width, geometry.height
                ),
            ));
        }
        let p = fields[3]
            .trim()
            .parse::<i64>()
            .ok()
            .and_then(Polarity::from_i64)
            .ok_or_else(|| {
                parse_err(
                    line,
                    format!("polarity must be 1 or -1, got `{}`", fields[3]),
                )
            })?;
        let e = Event::new(t, x as u32, y as u32, p);
        if let Some(prev) = events.last() {
            if event_order(prev, &e) == std::cmp::Ordering::Greater {
                return Err(parse_err(line, "rows are not sorted by (t, y, x, p)"));
            }
        }
        events.push(e);
    }
    let (t0, t_end) = span.unwrap_or((0.0, events.last().map_or(0.0, |e| e.t)));
    Ok(EventStream {
        events,
        geometry,
        t0,
        t_end,
    })
}

pub fn read_events(
    path: &Path,
    geometry: SensorGeometry,
    span: Option<(f64, f64)>,
) -> Result<EventStream> {
    parse_events(&fs::read_to_string(path)?, geometry, span)
}

/// One row per image row, comma-separated, no header.
pub fn grid_to_csv(width: usize, values: &[f64]) -> String {
    let mut out = String::new();
    for row in values.chunks(width) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_threshold_map(field: &ThresholdField, path: &Path) -> Result<()> {
    fs::write(path, grid_to_csv(field.geometry.width, &field.values))?;
    Ok(())
}

pub fn read_threshold_map(path: &Path, geometry: SensorGeometry) -> Result<ThresholdField> {
    let text = fs::read_to_string(path)?;
    let mut values = Vec::with_capacity(geometry.num_pixels());
    for (i, row) in text.lines().enumerate() {
        let before = values.len();
        for cell in row.split(',') {
            values.push(
                cell.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(i + 1, format!("bad value `{cell}`")))?,
            );
        }
        if values.len() - before != geometry.width {
            return Err(parse_err(
                i + 1,
                format!("expected {} columns", geometry.width),
            ));
        }
    }
    ThresholdField::new(geometry, values)
}

/// Plain (ASCII) graymap of `values` mapped linearly from `[lo, hi]` to `0..=255`.
pub fn graymap(width: usize, height: usize, values: &[f64], lo: f64, hi: f64) -> String {
    let mut out = format!("P2\n{width} {height}\n255\n");
    let span = if hi > lo { hi - lo } else { 1.0 };
    for row in values.chunks(width) {
        let cells: Vec<String> = row
            .iter()
            .map(|v| {
                (((v - lo) / span).clamp(0.0, 1.0) * 255.0)
                    .round()
                    .to_string()
            })
            .collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

/// Polarity image: net polarity per pixel over `events`, drawn as three gray
/// levels (255 for positive, 0 for negative, 128 for none or balanced).
pub fn polarity_graymap(geometry: SensorGeometry, events: &[Event]) -> String {
    let mut net = vec![0i64; geometry.num_pixels()];
    for e in events {
        net[geometry.index(e.u)] += e.p.as_i8() as i64;
    }
    let levels: Vec<f64> = net
        .iter()
        .map(|&n| match n.signum() {
            1 => 255.0,
            -1 => 0.0,
            _ => 128.0,
        })
        .collect();
    graymap(geometry.width, geometry.height, &levels, 0.0, 255.0)
}
