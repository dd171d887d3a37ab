//! Reader for the subset of the MATPOWER M-file case format used by the
//! bundled IEEE cases: `mpc.baseMVA`, `mpc.bus`, `mpc.branch` and `mpc.gen`.
//! Other assignments (`mpc.version`, `mpc.gencost`, cell arrays of bus
//! names, ...) are skipped.

use std::collections::HashMap;

use log::warn;

use super::{BranchRecord, BusKind, BusRecord, GenRecord, NetworkCase};
use crate::error::{Error, Result};

// Standard MATPOWER widths; wider rows carry OPF results we do not read.
const BUS_COLS: usize = 13;
const BRANCH_COLS: usize = 13;
const GEN_COLS: usize = 21;

const BUS_MIN: usize = 10;
const BRANCH_MIN: usize = 11;
const GEN_MIN: usize = 8;

struct Matrix {
    line: usize,
    rows: Vec<(usize, Vec<f64>)>,
}

pub fn parse_matpower_case(text: &str) -> Result<NetworkCase> {
    let mut scalars: HashMap<String, (usize, String)> = HashMap::new();
    let mut matrices: HashMap<String, Matrix> = HashMap::new();
    let mut name = String::from("case");

    let lines: Vec<&str> = text.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        let lineno = i + 1;
        let line = strip_comment(lines[i]).trim();
        i += 1;
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("function") {
            if let Some((_, fname)) = rest.split_once('=') {
                name = fname.trim().trim_end_matches(';').to_string();
            }
            continue;
        }
        let Some(assign) = line.strip_prefix("mpc.") else {
            continue;
        };
        let (field, value) = assign.split_once('=').ok_or_else(|| Error::Syntax {
            line: lineno,
            message: format!("expected assignment, found {line:?}"),
        })?;
        let field = field.trim().to_string();
        let value = value.trim_start();

        if let Some(body) = value.strip_prefix('[') {
            let (matrix, next) = read_matrix(&lines, lineno, body)?;
            i = next;
            matrices.insert(field, matrix);
        } else if value.starts_with('{') {
            i = skip_cell(&lines, lineno, value)?;
        } else {
            scalars.insert(field, (lineno, value.trim_end_matches(';').trim().to_string()));
        }
    }

    let (line, base) = scalars.get("baseMVA").ok_or(Error::MissingBlock("baseMVA"))?;
    let base_mva: f64 = base.parse().map_err(|_| Error::Syntax {
        line: *line,
        message: format!("baseMVA is not numeric: {base:?}"),
    })?;
    if !(base_mva > 0.0) {
        return Err(Error::InvalidCase(format!("base_mva must be positive, got {base_mva}")));
    }

    let bus = matrices.get("bus").ok_or(Error::MissingBlock("bus"))?;
    let branch = matrices.get("branch").ok_or(Error::MissingBlock("branch"))?;
    let gen = matrices.get("gen").ok_or(Error::MissingBlock("gen"))?;
    check_widths("bus", bus, BUS_MIN, BUS_COLS)?;
    check_widths("branch", branch, BRANCH_MIN, BRANCH_COLS)?;
    check_widths("gen", gen, GEN_MIN, GEN_COLS)?;

    let mut index_of: HashMap<u32, usize> = HashMap::new();
    let mut buses = Vec::with_capacity(bus.rows.len());
    for (line, row) in &bus.rows {
        let id = integer(row[0], *line, "bus id")?;
        if index_of.insert(id, buses.len()).is_some() {
            return Err(Error::DuplicateBus(id));
        }
        let kind = match integer(row[1], *line, "bus type")? {
            1 => BusKind::Pq,
            2 => BusKind::Pv,
            3 => BusKind::Slack,
            other => {
                return Err(Error::InvalidCase(format!("bus {id}: unsupported bus type {other}")));
            }
        };
        buses.push(BusRecord {
            id,
            kind,
            p_load: row[2] / base_mva,
            q_load: row[3] / base_mva,
            g_shunt: row[4] / base_mva,
            b_shunt: row[5] / base_mva,
            v_setpoint: row[7],
            base_kv: row[9],
        });
    }

    let lookup = |id: f64, line: usize| -> Result<usize> {
        let id = integer(id, line, "bus reference")?;
        index_of
            .get(&id)
            .copied()
            .ok_or_else(|| Error::InvalidCase(format!("line {line}: reference to unknown bus {id}")))
    };

    let mut gens = Vec::with_capacity(gen.rows.len());
    for (line, row) in &gen.rows {
        gens.push(GenRecord {
            bus: lookup(row[0], *line)?,
            pg: row[1] / base_mva,
            qg: row[2] / base_mva,
            vg: row[5],
            in_service: row[7] > 0.0,
        });
    }

    let mut branches = Vec::with_capacity(branch.rows.len());
    for (line, row) in &branch.rows {
        let tap = if row[8] == 0.0 { 1.0 } else { row[8] };
        branches.push(BranchRecord {
            from_bus: lookup(row[0], *line)?,
            to_bus: lookup(row[1], *line)?,
            r: row[2],
            x: row[3],
            b_charging: row[4],
            tap,
            shift: row[9].to_radians(),
            in_service: row[10] > 0.0,
        });
    }

    // Generator voltage setpoints govern regulated buses; a PV bus without an
    // in-service generator cannot regulate and is demoted to PQ.
    for (index, bus) in buses.iter_mut().enumerate() {
        let regulating = gens.iter().find(|g| g.in_service && g.bus == index);
        match (bus.kind, regulating) {
            (BusKind::Pv | BusKind::Slack, Some(g)) => bus.v_setpoint = g.vg,
            (BusKind::Pv, None) => {
                warn!("bus {} is PV without an in-service generator; treating as PQ", bus.id);
                bus.kind = BusKind::Pq;
            }
            _ => {}
        }
    }

    let case = NetworkCase { name, base_mva, buses, branches, gens };
    case.validate()?;
    Ok(case)
}

fn strip_comment(line: &str) -> &str {
    let mut in_quote = false;
    for (pos, ch) in line.char_indices() {
        match ch {
            '\'' => in_quote = !in_quote,
            '%' if !in_quote => return &line[..pos],
            _ => {}
        }
    }
    line
}

fn read_matrix(lines: &[&str], start: usize, first: &str) -> Result<(Matrix, usize)> {
    let mut rows = Vec::new();
    let mut current: Vec<f64> = Vec::new();
    let mut current_line = start;
    let mut lineno = start;
    let mut chunk = first.to_string();
    let mut next = start; // index of the line after `chunk`

    loop {
        let text = strip_comment(&chunk).to_string();
        let mut closed = false;
        for piece in split_keep(&text) {
            match piece {
                Piece::RowEnd => {
                    if !current.is_empty() {
                        rows.push((current_line, std::mem::take(&mut current)));
                    }
                }
                Piece::Close => {
                    closed = true;
                    break;
                }
                Piece::Token(tok) => {
                    let value: f64 = tok.parse().map_err(|_| Error::Syntax {
                        line: lineno,
                        message: format!("invalid numeric literal {tok:?}"),
                    })?;
                    if current.is_empty() {
                        current_line = lineno;
                    }
                    current.push(value);
                }
            }
        }
        // a newline also terminates a row
        if !current.is_empty() {
            rows.push((current_line, std::mem::take(&mut current)));
        }
        if closed {
            return Ok((Matrix { line: start, rows }, next));
        }
        if next >= lines.len() {
            return Err(Error::Syntax { line: start, message: "unterminated matrix block".into() });
        }
        chunk = lines[next].to_string();
        next += 1;
        lineno = next;
    }
}

enum Piece<'a> {
    Token(&'a str),
    RowEnd,
    Close,
}

fn split_keep(text: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (pos, ch) in text.char_indices() {
        let sep = ch.is_whitespace() || ch == ',' || ch == ';' || ch == ']';
        if sep {
            if let Some(s) = start.take() {
                out.push(Piece::Token(&text[s..pos]));
            }
            match ch {
                ';' => out.push(Piece::RowEnd),
                ']' => {
                    out.push(Piece::Close);
                    return out;
                }
                _ => {}
            }
        } else if start.is_none() {
            start = Some(pos);
        }
    }
    if let Some(s) = start {
        out.push(Piece::Token(&text[s..]));
    }
    out
}

fn skip_cell(lines: &[&str], start: usize, first: &str) -> Result<usize> {
    if strip_comment(first).contains('}') {
        return Ok(start);
    }
    let mut next = start;
    while next < lines.len() {
        let line = strip_comment(lines[next]);
        next += 1;
        if line.contains('}') {
            return Ok(next);
        }
    }
    Err(Error::Syntax { line: start, message: "unterminated cell array".into() })
}

fn check_widths(block: &str, matrix: &Matrix, min: usize, standard: usize) -> Result<()> {
    let mut warned = false;
    for (line, row) in &matrix.rows {
        if row.len() < min {
            return Err(Error::Syntax {
                line: *line,
                message: format!("{block} row has {} columns, need at least {min}", row.len()),
            });
        }
        if row.len() > standard && !warned {
            warn!("{block} block (line {}): ignoring columns beyond {standard}", matrix.line);
            warned = true;
        }
    }
    Ok(())
}

fn integer(value: f64, line: usize, what: &str) -> Result<u32> {
    if value.fract() != 0.0 || value < 0.0 || value > u32::MAX as f64 {
        return Err(Error::Syntax { line, message: format!("{what} must be a non-negative integer, got {value}") });
    }
    Ok(value as u32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::bundled;

    const TWO_BUS: &str = include_str!("../../cases/twobus.m");

    #[test]
    fn case14_counts() {
        let case = bundled::load("case14").unwrap();
        assert_eq!(case.buses.len(), 14);
        assert_eq!(case.branches.len(), 20);
        assert_eq!(case.gens.len(), 5);
        assert_eq!(case.base_mva, 100.0);
        assert_eq!(case.buses[case.slack()].id, 1);
    }

    #[test]
    fn two_bus_echo() {
        let case = parse_matpower_case(TWO_BUS).unwrap();
        assert_eq!(case.name, "twobus");
        assert_eq!(case.branches.len(), 1);
        assert_eq!(case.branches[0].b_charging, 0.0);
        assert_eq!(case.branches[0].tap, 1.0);
        assert_eq!(case.buses[1].p_load, 0.5);
        assert_eq!(case.buses[1].kind, BusKind::Pq);
    }

    #[test]
    fn missing_bus_block() {
        let err = parse_matpower_case("mpc.baseMVA = 100;\n").unwrap_err();
        assert_eq!(err.to_string(), "missing bus block");
    }

    #[test]
    fn syntax_error_reports_line() {
        let bad = TWO_BUS.replace("\t2\t1\t50", "\t2\t1\tfifty");
        match parse_matpower_case(&bad) {
            Err(Error::Syntax { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_bus_rejected() {
        let bad = TWO_BUS.replace("\t2\t1\t50", "\t1\t1\t50");
        assert!(matches!(parse_matpower_case(&bad), Err(Error::DuplicateBus(1))));
    }

    #[test]
    fn zero_impedance_rejected_but_zero_reactance_allowed() {
        let bad = TWO_BUS.replace("\t0\t0.1\t0\t0\t0\t0\t0\t0\t1", "\t0\t0\t0\t0\t0\t0\t0\t0\t1");
        assert!(matches!(parse_matpower_case(&bad), Err(Error::ZeroImpedance { .. })));
        let resistive = TWO_BUS.replace("\t0\t0.1\t0\t0\t0\t0\t0\t0\t1", "\t0.01\t0\t0\t0\t0\t0\t0\t0\t1");
        assert!(parse_matpower_case(&resistive).is_ok());
        let offline = TWO_BUS.replace("\t0\t0.1\t0\t0\t0\t0\t0\t0\t1", "\t0\t0\t0\t0\t0\t0\t0\t0\t0");
        let case = parse_matpower_case(&offline).unwrap();
        assert!(!case.branches[0].in_service);
    }

    #[test]
    fn per_unit_conversion_matches_source() {
        // Pd column of case14, MW
        let pd = [0.0, 21.7, 94.2, 47.8, 7.6, 11.2, 0.0, 0.0, 29.5, 9.0, 3.5, 6.1, 13.5, 14.9];
        let case = bundled::load("case14").unwrap();
        for (bus, mw) in case.buses.iter().zip(pd) {
            assert!((bus.p_load * case.base_mva - mw).abs() < 1e-9);
        }
        assert!((case.buses[8].b_shunt - 0.19).abs() < 1e-15);
    }

    #[test]
    fn taps_normalized_and_setpoints_from_generators() {
        let case = bundled::load("case14").unwrap();
        let taps: Vec<f64> = case.branches.iter().map(|b| b.tap).collect();
        assert_eq!(taps.iter().filter(|&&t| t != 1.0).count(), 3);
        assert_eq!(case.buses[0].v_setpoint, 1.06);
        assert_eq!(case.buses[7].v_setpoint, 1.09);
    }

    #[test]
    fn all_bundled_cases_parse() {
        let expected = [(14, 20), (30, 41), (39, 46), (57, 80), (118, 186)];
        for (name, (n, l)) in bundled::NAMES.iter().zip(expected) {
            let case = bundled::load(name).unwrap();
            assert_eq!((case.buses.len(), case.branches.len()), (n, l), "{name}");
        }
    }

    #[test]
    fn unterminated_block() {
        let err = parse_matpower_case("mpc.baseMVA = 100;\nmpc.bus = [\n1 3 0 0 0 0 1 1 0 0;\n").unwrap_err();
        assert!(matches!(err, Error::Syntax { line: 2, .. }));
    }
}
