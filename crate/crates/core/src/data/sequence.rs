use std::collections::BTreeMap;

use crate::data::features::{extract_momentum_features, PlayerFeatureVector};
use crate::data::record::PointRecord;
use crate::error::{Error, Result};

/// Half-open point range `[start, end)` of one game.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GameSpan {
    pub start: usize,
    pub end: usize,
    /// Index into [`MatchSequence::sets`].
    pub set: usize,
    /// 1 or 2.
    pub winner: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SetSpan {
    pub start: usize,
    pub end: usize,
    /// Index range into [`MatchSequence::games`].
    pub first_game: usize,
    pub last_game: usize,
    pub winner: u8,
}

/// One match in chronological order with features and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchSequence {
    pub match_id: String,
    pub player1: String,
    pub player2: String,
    pub p1: Vec<PlayerFeatureVector>,
    pub p2: Vec<PlayerFeatureVector>,
    /// 1 when player 1 won the point.
    pub y_point: Vec<u8>,
    /// `(set_no, game_no, point_no)` of each point.
    pub numbering: Vec<(u32, u32, u32)>,
    pub games: Vec<GameSpan>,
    pub sets: Vec<SetSpan>,
    /// 1 or 2.
    pub winner: u8,
}

impl MatchSequence {
    pub fn len(&self) -> usize {
        self.y_point.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_point.is_empty()
    }

    pub fn points_victor(&self, t: usize) -> u8 {
        if self.y_point[t] == 1 {
            1
        } else {
            2
        }
    }

    /// Checks the boundary and label invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Data(format!("match {}: {msg}", self.match_id)));
        let n = self.len();
        if n == 0 || self.p1.len() != n || self.p2.len() != n || self.numbering.len() != n {
            return bad("inconsistent lengths".into());
        }
        let mut pos = 0;
        for (g, span) in self.games.iter().enumerate() {
            if span.start != pos || span.end <= span.start {
                return bad(format!("game {g} does not continue the previous one"));
            }
            if span.winner != self.points_victor(span.end - 1) {
                return bad(format!("game {g} winner disagrees with its last point"));
            }
            pos = span.end;
        }
        if pos != n {
            return bad("games do not cover every point".into());
        }
        let mut game = 0;
        for (s, set) in self.sets.iter().enumerate() {
            if set.first_game != game || set.last_game < set.first_game {
                return bad(format!("set {s} does not continue the previous one"));
            }
            let (first, last) = (&self.games[set.first_game], &self.games[set.last_game]);
            if set.start != first.start || set.end != last.end || set.winner != last.winner {
                return bad(format!("set {s} boundaries disagree with its games"));
            }
            if self.games[set.first_game..=set.last_game].iter().any(|g| g.set != s) {
                return bad(format!("set {s} contains a game of another set"));
            }
            game = set.last_game + 1;
        }
        if game != self.games.len() {
            return bad("sets do not cover every game".into());
        }
        Ok(())
    }
}

/// Groups cleaned, normalized records into matches ordered by match id, with
/// points ordered by `point_no`.
pub fn build_match_sequences(records: &[PointRecord]) -> Result<Vec<MatchSequence>> {
    let mut groups: BTreeMap<&str, Vec<&PointRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.match_id.as_str()).or_default().push(r);
    }
    groups.into_values().map(build_one).collect()
}

fn build_one(mut points: Vec<&PointRecord>) -> Result<MatchSequence> {
    points.sort_by_key(|r| r.point_no);
    let first = points[0];
    let id = &first.match_id;
    let mut seq = MatchSequence {
        match_id: id.clone(),
        player1: first.player1.clone(),
        player2: first.player2.clone(),
        p1: Vec::with_capacity(points.len()),
        p2: Vec::with_capacity(points.len()),
        y_point: Vec::with_capacity(points.len()),
        numbering: Vec::with_capacity(points.len()),
        games: Vec::new(),
        sets: Vec::new(),
        winner: 0,
    };
    for (t, r) in points.iter().enumerate() {
        if t > 0 && r.point_no == points[t - 1].point_no {
            return Err(Error::Data(format!("match {id}: point_no {} appears twice", r.point_no)));
        }
        let (a, b) = extract_momentum_features(r);
        seq.p1.push(a);
        seq.p2.push(b);
        seq.y_point.push(u8::from(r.points_victor == 1));
        seq.numbering.push((r.set_no, r.game_no, r.point_no));

        let new_set = t == 0 || r.set_no != points[t - 1].set_no;
        let new_game = new_set || r.game_no != points[t - 1].game_no;
        if new_set {
            if let Some(prev) = points.get(t.wrapping_sub(1)) {
                if r.set_no < prev.set_no {
                    return Err(Error::Data(format!("match {id}: set numbers go backwards at point {}", r.point_no)));
                }
            }
            seq.sets.push(SetSpan { start: t, end: t, first_game: seq.games.len(), last_game: 0, winner: 0 });
        }
        if new_game {
            seq.games.push(GameSpan { start: t, end: t, set: seq.sets.len() - 1, winner: 0 });
        }
        let game = seq.games.last_mut().unwrap();
        game.end = t + 1;
        game.winner = r.points_victor;
        let set = seq.sets.last_mut().unwrap();
        set.end = t + 1;
        set.last_game = seq.games.len() - 1;
        set.winner = r.points_victor;
    }

    for (r, t) in points.iter().zip(0..) {
        let g = seq.games.iter().find(|g| g.start <= t && t < g.end).unwrap();
        if r.game_victor != 0 && r.game_victor != g.winner {
            return Err(Error::Data(format!(
                "match {id}: game_victor {} at point {} but the game's last point went to player {}",
                r.game_victor, r.point_no, g.winner
            )));
        }
        let s = &seq.sets[g.set];
        if r.set_victor != 0 && r.set_victor != s.winner {
            return Err(Error::Data(format!(
                "match {id}: set_victor {} at point {} disagrees with the set's last game",
                r.set_victor, r.point_no
            )));
        }
    }

    let won = |p: u8| seq.sets.iter().filter(|s| s.winner == p).count();
    seq.winner = match won(1).cmp(&won(2)) {
        std::cmp::Ordering::Greater => 1,
        std::cmp::Ordering::Less => 2,
        std::cmp::Ordering::Equal => seq.sets.last().unwrap().winner,
    };
    seq.validate()?;
    Ok(seq)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::record::PlayerPoint;

    /// A match from `(set_no, game_no, victor)` triples.
    pub(crate) fn records(id: &str, plan: &[(u32, u32, u8)]) -> Vec<PointRecord> {
        plan.iter()
            .enumerate()
            .map(|(i, &(set_no, game_no, victor))| {
                let mut r = PointRecord {
                    match_id: id.into(),
                    player1: "A".into(),
                    player2: "B".into(),
                    set_no,
                    game_no,
                    point_no: i as u32 + 1,
                    points_victor: victor,
                    players: [PlayerPoint { serve: 1, ..Default::default() }, PlayerPoint::default()],
                    ..Default::default()
                };
                r.recompute_derived();
                r
            })
            .collect()
    }

    #[test]
    fn boundaries_and_labels() {
        let mut plan = vec![(1, 1, 1), (1, 1, 1), (1, 1, 2), (1, 1, 1), (1, 2, 2), (1, 2, 2), (2, 1, 2)];
        plan.push((2, 1, 2));
        let seqs = build_match_sequences(&records("m", &plan)).unwrap();
        let s = &seqs[0];
        assert_eq!(s.y_point, vec![1, 1, 0, 1, 0, 0, 0, 0]);
        assert_eq!(s.games.len(), 3);
        assert_eq!((s.games[0].start, s.games[0].end, s.games[0].winner), (0, 4, 1));
        assert_eq!((s.games[1].start, s.games[1].end, s.games[1].winner), (4, 6, 2));
        assert_eq!(s.sets.len(), 2);
        assert_eq!((s.sets[1].first_game, s.sets[1].last_game), (2, 2));
        assert_eq!(s.winner, 2);
    }

    #[test]
    fn matches_sorted_by_id_and_points_by_number() {
        let mut recs = records("z", &[(1, 1, 1)]);
        let mut b = records("a", &[(1, 1, 2), (1, 1, 1)]);
        b.reverse();
        recs.extend(b);
        let seqs = build_match_sequences(&recs).unwrap();
        assert_eq!(seqs[0].match_id, "a");
        assert_eq!(seqs[0].y_point, vec![0, 1]);
        assert_eq!(seqs[1].match_id, "z");
    }

    #[test]
    fn inconsistent_game_victor_is_rejected() {
        let mut recs = records("m", &[(1, 1, 1), (1, 1, 1)]);
        recs[1].game_victor = 2;
        assert!(matches!(build_match_sequences(&recs), Err(Error::Data(_))));
        recs[1].game_victor = 1;
        assert!(build_match_sequences(&recs).is_ok());
    }
}
