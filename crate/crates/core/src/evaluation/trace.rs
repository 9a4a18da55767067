use std::io::Write;
use std::path::Path;

use crate::data::MatchSequence;
use crate::error::{Error, Result};
use crate::multigran::{half_time_index, HydraNetModel};

#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub set_no: u32,
    pub game_no: u32,
    pub point_no: u32,
    pub points_victor: u8,
    pub ms_p1: f64,
    pub ms_p2: f64,
    /// First point of a game that follows another game of the same set.
    pub cross_game: bool,
    /// First point of a set after the first.
    pub cross_set: bool,
    pub half_time: bool,
    pub streak: usize,
}

/// A maximal run of points won by the same player.
#[derive(Debug, Clone, PartialEq)]
pub struct Streak {
    /// Half-open point range.
    pub start: usize,
    pub end: usize,
    pub winner: u8,
    /// Mean of player 1's momentum score over the run.
    pub mean_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentumTrace {
    pub match_id: String,
    pub points: Vec<TracePoint>,
    pub streaks: Vec<Streak>,
}

/// Splits the points into maximal same-winner runs.
pub fn streaks(winners: &[u8], ms_p1: &[f64]) -> Vec<Streak> {
    let mut out: Vec<Streak> = Vec::new();
    let mut start = 0;
    for t in 1..=winners.len() {
        if t == winners.len() || winners[t] != winners[start] {
            let run = &ms_p1[start..t];
            out.push(Streak {
                start,
                end: t,
                winner: winners[start],
                mean_ms: run.iter().sum::<f64>() / run.len() as f64,
            });
            start = t;
        }
    }
    out
}

/// Builds the trace of `m` from player 1's per-point momentum scores.
pub fn build_trace(m: &MatchSequence, ms_p1: &[f64]) -> Result<MomentumTrace> {
    if ms_p1.len() != m.len() || m.is_empty() {
        return Err(Error::Shape(format!("{} scores for a {}-point match", ms_p1.len(), m.len())));
    }
    let winners: Vec<u8> = (0..m.len()).map(|t| m.points_victor(t)).collect();
    let streaks = streaks(&winners, ms_p1);
    let mut streak_of = vec![0; m.len()];
    for (k, s) in streaks.iter().enumerate() {
        streak_of[s.start..s.end].iter_mut().for_each(|v| *v = k);
    }
    let mut boundary = vec![(false, false); m.len()];
    for pair in m.games.windows(2) {
        let crosses_set = pair[0].set != pair[1].set;
        boundary[pair[1].start] = (!crosses_set, crosses_set);
    }
    let ht = half_time_index(m.len());
    let points = (0..m.len())
        .map(|t| {
            let (set_no, game_no, point_no) = m.numbering[t];
            TracePoint {
                set_no,
                game_no,
                point_no,
                points_victor: winners[t],
                ms_p1: ms_p1[t],
                ms_p2: 1.0 - ms_p1[t],
                cross_game: boundary[t].0,
                cross_set: boundary[t].1,
                half_time: t == ht,
                streak: streak_of[t],
            }
        })
        .collect();
    Ok(MomentumTrace { match_id: m.match_id.clone(), points, streaks })
}

/// Runs the model over a completed match and traces its momentum scores.
pub fn export_ms_trace(model: &HydraNetModel, m: &MatchSequence) -> Result<MomentumTrace> {
    build_trace(m, &model.predict(m)?)
}

impl MomentumTrace {
    pub const HEADER: [&'static str; 13] = [
        "match_id",
        "set_no",
        "game_no",
        "point_no",
        "points_victor",
        "ms_p1",
        "ms_p2",
        "cross_game",
        "cross_set",
        "half_time",
        "streak_id",
        "streak_winner",
        "streak_mean_ms",
    ];

    pub fn write_csv_to<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::HEADER)?;
        let flag = |b: bool| if b { "1" } else { "0" }.to_string();
        for p in &self.points {
            let s = &self.streaks[p.streak];
            out.write_record([
                self.match_id.clone(),
                p.set_no.to_string(),
                p.game_no.to_string(),
                p.point_no.to_string(),
                p.points_victor.to_string(),
                p.ms_p1.to_string(),
                p.ms_p2.to_string(),
                flag(p.cross_game),
                flag(p.cross_set),
                flag(p.half_time),
                p.streak.to_string(),
                s.winner.to_string(),
                s.mean_ms.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<trace>", e))?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(std::io::BufWriter::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_match_sequences;
    use crate::data::sequence::tests::records;
    use proptest::prelude::*;

    #[test]
    fn streak_mean_example() {
        let s = streaks(&[1, 1, 1, 2], &[0.6, 0.7, 0.8, 0.1]);
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].start, s[0].end, s[0].winner), (0, 3, 1));
        assert!((s[0].mean_ms - 0.7).abs() < 1e-15);
        assert_eq!((s[1].start, s[1].end, s[1].winner, s[1].mean_ms), (3, 4, 2, 0.1));
    }

    #[test]
    fn flags_and_csv() {
        let plan = [(1, 1, 1), (1, 1, 1), (1, 2, 2), (1, 2, 2), (2, 1, 2), (2, 1, 1), (3, 1, 1)];
        let m = &build_match_sequences(&records("t", &plan)).unwrap()[0];
        let ms: Vec<f64> = (0..7).map(|t| 0.1 + 0.1 * t as f64).collect();
        let tr = build_trace(m, &ms).unwrap();
        let flags: Vec<(bool, bool, bool)> = tr.points.iter().map(|p| (p.cross_game, p.cross_set, p.half_time)).collect();
        assert_eq!(
            flags,
            vec![
                (false, false, false),
                (false, false, false),
                (true, false, false),
                (false, false, true),
                (false, true, false),
                (false, false, false),
                (false, true, false),
            ]
        );
        assert!(tr.points.iter().all(|p| p.ms_p1 + p.ms_p2 == 1.0));
        let mut buf = Vec::new();
        tr.write_csv_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], MomentumTrace::HEADER.join(","));
        assert_eq!(lines.len(), 8);
        assert!(lines[1].starts_with("t,1,1,1,1,0.1,0.9,0,0,0,0,1,"));
        assert!(build_trace(m, &ms[..3]).is_err());
    }

    proptest! {
        #[test]
        fn streaks_partition_points(
            w in prop::collection::vec(1u8..3, 1..80),
            seed in prop::collection::vec(0.0f64..1.0, 80),
        ) {
            let ms = &seed[..w.len()];
            let s = streaks(&w, ms);
            let mut pos = 0;
            for (k, st) in s.iter().enumerate() {
                prop_assert_eq!(st.start, pos);
                prop_assert!(st.end > st.start);
                prop_assert!(w[st.start..st.end].iter().all(|&v| v == st.winner));
                if k > 0 {
                    prop_assert!(s[k - 1].winner != st.winner);
                }
                pos = st.end;
            }
            prop_assert_eq!(pos, w.len());
            for &x in ms {
                prop_assert_eq!(x + (1.0 - x), 1.0);
            }
        }
    }
}
