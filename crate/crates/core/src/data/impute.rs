use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::record::PointRecord;
use crate::error::{Error, Result};

/// Weighted empirical distribution over observed serve speeds.
#[derive(Debug, Clone)]
struct Mixture {
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl Mixture {
    /// Player speeds and global speeds mixed 1:1 by total weight. With no
    /// player speeds the global distribution is used alone.
    fn new(player: &[f64], global: &[f64]) -> Self {
        let mut pairs = Vec::with_capacity(player.len() + global.len());
        let (wp, wg) = if player.is_empty() { (0.0, 1.0) } else { (0.5, 0.5) };
        pairs.extend(player.iter().map(|&v| (v, wp / player.len() as f64)));
        pairs.extend(global.iter().map(|&v| (v, wg / global.len() as f64)));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut values: Vec<f64> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for (v, w) in pairs {
            if values.last() == Some(&v) {
                *weights.last_mut().unwrap() += w;
            } else {
                values.push(v);
                weights.push(w);
            }
        }
        Mixture { values, weights }
    }

    /// Weighted median; when the cumulative weight lands exactly on one half
    /// the two neighbouring values are averaged.
    fn median(&self) -> f64 {
        let total: f64 = self.weights.iter().sum();
        let mut acc = 0.0;
        for (i, (&v, &w)) in self.values.iter().zip(&self.weights).enumerate() {
            acc += w;
            let rel = acc / total;
            if (rel - 0.5).abs() < 1e-12 && i + 1 < self.values.len() {
                return 0.5 * (v + self.values[i + 1]);
            }
            if rel > 0.5 {
                return v;
            }
        }
        *self.values.last().expect("non-empty mixture")
    }

    /// Draws from the part of the mixture on one side of the median.
    fn draw_half(&self, upper: bool, rng: &mut ChaCha8Rng) -> f64 {
        let m = self.median();
        let keep: Vec<usize> = (0..self.values.len())
            .filter(|&i| if upper { self.values[i] >= m } else { self.values[i] <= m })
            .collect();
        let total: f64 = keep.iter().map(|&i| self.weights[i]).sum();
        let mut u = rng.gen::<f64>() * total;
        for &i in &keep {
            u -= self.weights[i];
            if u < 0.0 {
                return self.values[i];
            }
        }
        self.values[*keep.last().expect("median splits a non-empty set")]
    }
}

/// Fills missing serve speeds on points where the player served.
///
/// Each missing value is drawn from the mixture of the server's observed
/// speeds with the global observed speeds. Points in service games the
/// server went on to win draw from the upper half of the mixture, lost
/// games from the lower half. Present speeds are never changed.
pub fn impute_serve_speed(records: &mut [PointRecord], seed: u64) -> Result<()> {
    let mut by_player: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut global = Vec::new();
    let mut any_missing = false;
    for r in records.iter() {
        let Some(s) = r.server() else { continue };
        match r.players[s].serve_speed {
            Some(v) => {
                by_player.entry(r.player_name(s)).or_default().push(v);
                global.push(v);
            }
            None => any_missing = true,
        }
    }
    if !any_missing {
        return Ok(());
    }
    if global.is_empty() {
        return Err(Error::Data("serve speeds are missing but no speed is observed anywhere".into()));
    }

    let mut game_winner: HashMap<(&str, u32, u32), u8> = HashMap::new();
    for r in records.iter() {
        game_winner.insert((r.match_id.as_str(), r.set_no, r.game_no), r.points_victor);
    }

    let mut cache: HashMap<&str, Mixture> = HashMap::new();
    let mut fills = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (i, r) in records.iter().enumerate() {
        let Some(s) = r.server() else { continue };
        if r.players[s].serve_speed.is_some() {
            continue;
        }
        let name = r.player_name(s);
        let mix = cache.entry(name).or_insert_with(|| {
            Mixture::new(by_player.get(name).map_or(&[][..], Vec::as_slice), &global)
        });
        let won = game_winner[&(r.match_id.as_str(), r.set_no, r.game_no)] as usize == s + 1;
        fills.push((i, s, mix.draw_half(won, &mut rng)));
    }
    for (i, s, v) in fills {
        records[i].players[s].serve_speed = Some(v);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::record::PlayerPoint;

    fn point(game: u32, victor: u8, speed: Option<f64>) -> PointRecord {
        let mut p1 = PlayerPoint { serve: 1, serve_speed: speed, ..Default::default() };
        p1.score = "0".into();
        PointRecord {
            match_id: "m".into(),
            player1: "A".into(),
            player2: "B".into(),
            set_no: 1,
            game_no: game,
            point_no: 1,
            points_victor: victor,
            players: [p1, PlayerPoint::default()],
            ..Default::default()
        }
    }

    #[test]
    fn no_missing_is_identity() {
        let mut recs = vec![point(1, 1, Some(100.0)), point(1, 2, Some(120.0))];
        let before = recs.clone();
        impute_serve_speed(&mut recs, 3).unwrap();
        assert_eq!(recs, before);
    }

    #[test]
    fn mixture_median_of_two_values() {
        let m = Mixture::new(&[100.0, 120.0], &[100.0, 120.0]);
        assert_eq!(m.median(), 110.0);
    }

    #[test]
    fn won_game_draws_above_median() {
        for seed in 0..20 {
            let mut recs = vec![point(1, 1, Some(100.0)), point(2, 1, Some(120.0)), point(3, 1, None)];
            impute_serve_speed(&mut recs, seed).unwrap();
            assert!(recs[2].players[0].serve_speed.unwrap() >= 110.0);
            let mut recs = vec![point(1, 1, Some(100.0)), point(2, 1, Some(120.0)), point(3, 2, None)];
            impute_serve_speed(&mut recs, seed).unwrap();
            assert!(recs[2].players[0].serve_speed.unwrap() <= 110.0);
        }
    }

    #[test]
    fn same_seed_same_result() {
        let make = || {
            (0..30)
                .map(|i| point(i / 3 + 1, (i % 2 + 1) as u8, if i % 4 == 0 { None } else { Some(90.0 + i as f64) }))
                .collect::<Vec<_>>()
        };
        let (mut a, mut b) = (make(), make());
        impute_serve_speed(&mut a, 11).unwrap();
        impute_serve_speed(&mut b, 11).unwrap();
        assert_eq!(a, b);
        let orig = make();
        for (x, o) in a.iter().zip(&orig) {
            if let Some(v) = o.players[0].serve_speed {
                assert_eq!(x.players[0].serve_speed, Some(v));
            }
            assert!(x.players[0].serve_speed.is_some());
        }
    }

    #[test]
    fn empty_global_is_data_error() {
        let mut recs = vec![point(1, 1, None)];
        assert!(matches!(impute_serve_speed(&mut recs, 0), Err(Error::Data(_))));
    }
}
