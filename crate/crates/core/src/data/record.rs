use std::io::{Read, Write};
use std::path::Path;

use crate::data::schema::{column_index, player_column, COLUMNS};
use crate::error::{Error, Result};

/// One CSV data row with its fields rearranged into [`COLUMNS`] order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    /// 1-based line number in the source file.
    pub line: u64,
    fields: Vec<String>,
}

impl RawRecord {
    pub fn get(&self, column: &str) -> &str {
        let i = column_index(column).unwrap_or_else(|| panic!("unknown column {column}"));
        &self.fields[i]
    }

    pub fn from_fields(line: u64, fields: Vec<String>) -> Self {
        assert_eq!(fields.len(), COLUMNS.len());
        RawRecord { line, fields }
    }
}

pub fn parse_point_csv(path: &Path) -> Result<Vec<RawRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_point_csv_from(file)
}

/// Binds every data row to the canonical columns by header name. Extra
/// columns are ignored.
pub fn parse_point_csv_from<R: Read>(reader: R) -> Result<Vec<RawRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let mut positions = Vec::with_capacity(COLUMNS.len());
    let mut missing = Vec::new();
    for col in COLUMNS {
        let found: Vec<usize> = header.iter().enumerate().filter(|(_, h)| h.trim() == col).map(|(i, _)| i).collect();
        match found.as_slice() {
            [i] => positions.push(*i),
            [] => missing.push(col),
            _ => return Err(Error::Schema(format!("column {col} appears more than once"))),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Schema(format!("missing required columns: {}", missing.join(", "))));
    }

    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(Error::Row {
                line,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let fields = positions.iter().map(|&i| rec[i].trim().to_string()).collect();
        out.push(RawRecord { line, fields });
    }
    Ok(out)
}

/// Per-player columns of a point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlayerPoint {
    pub sets_won: u32,
    pub games_won: u32,
    /// Scoreboard token ("0", "15", "30", "40", "AD", or a tiebreak count).
    pub score: String,
    pub serve: u8,
    pub points_won: u8,
    pub points_sum: u32,
    pub ace: u8,
    pub winner: u8,
    pub double_fault: u8,
    pub unf_err: u8,
    pub net_pt: u8,
    pub net_pt_won: u8,
    pub break_pt: u8,
    pub break_pt_won: u8,
    pub break_pt_missed: u8,
    pub distance_run: f64,
    pub points_diff: i64,
    pub game_diff: i64,
    pub set_diff: i64,
    /// `None` until imputed; only meaningful on points the player serves.
    pub serve_speed: Option<f64>,
    pub serve_depth: u8,
    pub return_depth: u8,
}

/// A cleaned point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointRecord {
    pub match_id: String,
    pub player1: String,
    pub player2: String,
    pub elapsed_seconds: u64,
    pub set_no: u32,
    pub game_no: u32,
    pub point_no: u32,
    /// 1 or 2.
    pub points_victor: u8,
    /// 0 when not recorded on this point, else 1 or 2.
    pub game_victor: u8,
    pub set_victor: u8,
    pub players: [PlayerPoint; 2],
}

impl PointRecord {
    pub fn player_name(&self, player: usize) -> &str {
        if player == 0 {
            &self.player1
        } else {
            &self.player2
        }
    }

    /// Index (0 or 1) of the serving player, if exactly one serves.
    pub fn server(&self) -> Option<usize> {
        match (self.players[0].serve, self.players[1].serve) {
            (1, 0) => Some(0),
            (0, 1) => Some(1),
            _ => None,
        }
    }

    /// Recomputes the six difference columns and the won-point indicators.
    pub fn recompute_derived(&mut self) {
        let [a, b] = &self.players;
        let points = a.points_sum as i64 - b.points_sum as i64;
        let games = a.games_won as i64 - b.games_won as i64;
        let sets = a.sets_won as i64 - b.sets_won as i64;
        let victor = self.points_victor;
        for (k, (sign, p)) in [1i64, -1].into_iter().zip(self.players.iter_mut()).enumerate() {
            p.points_diff = sign * points;
            p.game_diff = sign * games;
            p.set_diff = sign * sets;
            p.points_won = u8::from(victor as usize == k + 1);
        }
    }

    /// Fields in [`COLUMNS`] order.
    pub fn to_fields(&self) -> Vec<String> {
        let mut out = vec![String::new(); COLUMNS.len()];
        let mut put = |col: &str, v: String| out[column_index(col).expect("schema column")] = v;
        put("match_id", self.match_id.clone());
        put("player1", self.player1.clone());
        put("player2", self.player2.clone());
        put("elapsed_time", format_elapsed(self.elapsed_seconds));
        put("set_no", self.set_no.to_string());
        put("game_no", self.game_no.to_string());
        put("point_no", self.point_no.to_string());
        put("points_victor", self.points_victor.to_string());
        put("game_victor", self.game_victor.to_string());
        put("set_victor", self.set_victor.to_string());
        for (k, p) in self.players.iter().enumerate() {
            let mut pc = |f: &str, v: String| put(&player_column(k, f), v);
            pc("sets_won", p.sets_won.to_string());
            pc("games_won", p.games_won.to_string());
            pc("score", p.score.clone());
            pc("serve", p.serve.to_string());
            pc("points_won", p.points_won.to_string());
            pc("points_sum", p.points_sum.to_string());
            pc("ace", p.ace.to_string());
            pc("winner", p.winner.to_string());
            pc("double_fault", p.double_fault.to_string());
            pc("unf_err", p.unf_err.to_string());
            pc("net_pt", p.net_pt.to_string());
            pc("net_pt_won", p.net_pt_won.to_string());
            pc("break_pt", p.break_pt.to_string());
            pc("break_pt_won", p.break_pt_won.to_string());
            pc("break_pt_missed", p.break_pt_missed.to_string());
            pc("distance_run", p.distance_run.to_string());
            pc("points_diff", p.points_diff.to_string());
            pc("game_diff", p.game_diff.to_string());
            pc("set_diff", p.set_diff.to_string());
            pc("serve_speed", p.serve_speed.map_or_else(String::new, |v| v.to_string()));
            pc("serve_depth", p.serve_depth.to_string());
            pc("return_depth", p.return_depth.to_string());
        }
        out
    }
}

fn is_dropped(raw: &RawRecord) -> bool {
    let bad_score = |s: &str| s == "0X" || s == "0Y";
    bad_score(raw.get("p1_score"))
        || bad_score(raw.get("p2_score"))
        || (raw.get("p1_serve") == "0" && raw.get("p2_serve") == "0")
}

/// Applies the cleaning rules: drops rows with a "0X"/"0Y" score or no
/// server, maps depth tokens to 0/1 (missing as 0), recomputes the
/// difference columns and sets the won-point indicators.
pub fn clean_points(raw: &[RawRecord]) -> Result<Vec<PointRecord>> {
    raw.iter().filter(|r| !is_dropped(r)).map(clean_row).collect()
}

fn clean_row(raw: &RawRecord) -> Result<PointRecord> {
    let line = raw.line;
    let err = |col: &str, msg: String| Error::Row { line, message: format!("{col}: {msg}") };
    let text = |col: &str| raw.get(col).to_string();
    let uint = |col: &str| -> Result<u32> {
        raw.get(col).parse::<u32>().map_err(|_| err(col, format!("expected a non-negative integer, got {:?}", raw.get(col))))
    };
    let positive = |col: &str| -> Result<u32> {
        match uint(col)? {
            0 => Err(err(col, "must be positive".into())),
            v => Ok(v),
        }
    };
    let flag = |col: &str| -> Result<u8> {
        match raw.get(col) {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(Error::Value(format!("line {line}: {col} must be 0 or 1, got {other:?}"))),
        }
    };
    let victor = |col: &str, allow_zero: bool| -> Result<u8> {
        match raw.get(col) {
            "1" => Ok(1),
            "2" => Ok(2),
            "0" | "" if allow_zero => Ok(0),
            other => Err(Error::Value(format!("line {line}: {col} must be a player number, got {other:?}"))),
        }
    };
    let float = |col: &str| -> Result<f64> {
        let v = raw.get(col).parse::<f64>().map_err(|_| err(col, format!("expected a number, got {:?}", raw.get(col))))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(err(col, "must be finite".into()))
        }
    };
    let depth = |col: &str, one: &str, zero: &str| -> Result<u8> {
        match raw.get(col) {
            "" | "NA" | "0" => Ok(0),
            "1" => Ok(1),
            t if t == one => Ok(1),
            t if t == zero => Ok(0),
            other => Err(Error::Value(format!("line {line}: unknown {col} token {other:?}"))),
        }
    };

    let mut players: [PlayerPoint; 2] = Default::default();
    for (k, p) in players.iter_mut().enumerate() {
        let c = |f: &str| player_column(k, f);
        *p = PlayerPoint {
            sets_won: uint(&c("sets_won"))?,
            games_won: uint(&c("games_won"))?,
            score: text(&c("score")),
            serve: flag(&c("serve"))?,
            points_won: 0,
            points_sum: uint(&c("points_sum"))?,
            ace: flag(&c("ace"))?,
            winner: flag(&c("winner"))?,
            double_fault: flag(&c("double_fault"))?,
            unf_err: flag(&c("unf_err"))?,
            net_pt: flag(&c("net_pt"))?,
            net_pt_won: flag(&c("net_pt_won"))?,
            break_pt: flag(&c("break_pt"))?,
            break_pt_won: flag(&c("break_pt_won"))?,
            break_pt_missed: flag(&c("break_pt_missed"))?,
            distance_run: float(&c("distance_run"))?,
            points_diff: 0,
            game_diff: 0,
            set_diff: 0,
            serve_speed: match raw.get(&c("serve_speed")) {
                "" | "NA" => None,
                _ => Some(float(&c("serve_speed"))?),
            },
            serve_depth: depth(&c("serve_depth"), "CTL", "NCTL")?,
            return_depth: depth(&c("return_depth"), "D", "ND")?,
        };
    }

    let mut rec = PointRecord {
        match_id: text("match_id"),
        player1: text("player1"),
        player2: text("player2"),
        elapsed_seconds: parse_elapsed(raw.get("elapsed_time")).ok_or_else(|| {
            err("elapsed_time", format!("expected H:MM:SS, got {:?}", raw.get("elapsed_time")))
        })?,
        set_no: positive("set_no")?,
        game_no: positive("game_no")?,
        point_no: positive("point_no")?,
        points_victor: victor("points_victor", false)?,
        game_victor: victor("game_victor", true)?,
        set_victor: victor("set_victor", true)?,
        players,
    };
    if rec.match_id.is_empty() {
        return Err(err("match_id", "must not be empty".into()));
    }
    rec.recompute_derived();
    Ok(rec)
}

pub fn parse_elapsed(s: &str) -> Option<u64> {
    let mut parts = s.split(':');
    let h: u64 = parts.next()?.parse().ok()?;
    let m: u64 = parts.next()?.parse().ok()?;
    let sec: u64 = parts.next()?.parse().ok()?;
    if parts.next().is_some() || m >= 60 || sec >= 60 {
        return None;
    }
    Some(h * 3600 + m * 60 + sec)
}

pub fn format_elapsed(total: u64) -> String {
    format!("{}:{:02}:{:02}", total / 3600, (total / 60) % 60, total % 60)
}

pub fn write_points_csv_to<W: Write>(writer: W, records: &[PointRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(COLUMNS)?;
    for r in records {
        w.write_record(r.to_fields())?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn write_points_csv(path: &Path, records: &[PointRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_points_csv_to(std::io::BufWriter::new(file), records)
}

/// Reads an already-cleaned CSV; cleaning is idempotent on such files.
pub fn load_points_csv(path: &Path) -> Result<Vec<PointRecord>> {
    clean_points(&parse_point_csv(path)?)
}
