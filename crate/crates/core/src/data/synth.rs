use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::ingest::ingest_records;
use crate::data::record::{PlayerPoint, PointRecord};
use crate::data::sequence::MatchSequence;
use crate::error::{Error, Result};

/// Signals planted by the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// 3 or 5.
    pub best_of: u32,
    /// Probability that the winner of a game also wins the next one.
    pub carryover: f64,
    /// Probability that the player meant to win a game wins each of its points.
    pub point_bias: f64,
    /// When set, every point carries an ending indicator consistent with its
    /// victor (ace or winner for the victor, unforced error or double fault
    /// for the loser).
    pub point_signal: bool,
    /// Fraction of serve speeds left missing.
    pub missing_speed: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { best_of: 3, carryover: 0.8, point_bias: 0.6, point_signal: true, missing_speed: 0.05 }
    }
}

const SCORES: [&str; 4] = ["0", "15", "30", "40"];

/// Game-level scoring state.
struct GameScore {
    tiebreak: bool,
    points: [u32; 2],
}

impl GameScore {
    fn target(&self) -> u32 {
        if self.tiebreak {
            7
        } else {
            4
        }
    }

    fn winner(&self) -> Option<usize> {
        let [a, b] = self.points;
        let t = self.target();
        if a >= t && a >= b + 2 {
            Some(0)
        } else if b >= t && b >= a + 2 {
            Some(1)
        } else {
            None
        }
    }

    /// True when `returner` would take the game by winning the next point.
    fn break_point(&self, returner: usize) -> bool {
        let r = self.points[returner];
        let s = self.points[1 - returner];
        !self.tiebreak && r + 1 >= 4 && r + 1 >= s + 2
    }

    fn tokens(&self) -> [String; 2] {
        let [a, b] = self.points;
        if self.tiebreak {
            return [a.to_string(), b.to_string()];
        }
        if a >= 3 && b >= 3 {
            return match a.cmp(&b) {
                std::cmp::Ordering::Greater => ["AD".into(), "40".into()],
                std::cmp::Ordering::Less => ["40".into(), "AD".into()],
                std::cmp::Ordering::Equal => ["40".into(), "40".into()],
            };
        }
        [SCORES[a.min(3) as usize].into(), SCORES[b.min(3) as usize].into()]
    }
}

struct MatchState {
    rng: ChaCha8Rng,
    cfg: SynthConfig,
    records: Vec<PointRecord>,
    match_id: String,
    names: [String; 2],
    base_speed: [f64; 2],
    sets_won: [u32; 2],
    points_sum: [u32; 2],
    elapsed: u64,
}

impl MatchState {
    /// Plays one game whose winner is forced to be `intended` by replaying
    /// until the outcome agrees.
    fn play_game(&mut self, set_no: u32, game_no: u32, games_won: [u32; 2], server: usize, intended: usize) {
        let tiebreak = games_won == [6, 6];
        let outcomes = loop {
            let mut score = GameScore { tiebreak, points: [0, 0] };
            let mut seq = Vec::new();
            while score.winner().is_none() {
                let p = if self.rng.gen_bool(self.cfg.point_bias) { intended } else { 1 - intended };
                seq.push(p);
                score.points[p] += 1;
            }
            if score.winner() == Some(intended) {
                break seq;
            }
        };

        let mut score = GameScore { tiebreak, points: [0, 0] };
        let n = outcomes.len();
        for (k, &victor) in outcomes.iter().enumerate() {
            let srv = if tiebreak && k.div_ceil(2) % 2 == 1 { 1 - server } else { server };
            let returner = 1 - srv;
            let break_pt = score.break_point(returner);
            score.points[victor] += 1;
            self.points_sum[victor] += 1;
            self.elapsed += self.rng.gen_range(15..60);
            let last_of_game = k + 1 == n;
            let point_no = self.records.len() as u32 + 1;
            let mut rec = PointRecord {
                match_id: self.match_id.clone(),
                player1: self.names[0].clone(),
                player2: self.names[1].clone(),
                elapsed_seconds: self.elapsed,
                set_no,
                game_no,
                point_no,
                points_victor: victor as u8 + 1,
                game_victor: if last_of_game { victor as u8 + 1 } else { 0 },
                set_victor: 0,
                players: Default::default(),
            };
            let tokens = score.tokens();
            for (i, tok) in tokens.into_iter().enumerate() {
                rec.players[i] = PlayerPoint {
                    sets_won: self.sets_won[i],
                    games_won: games_won[i],
                    score: tok,
                    serve: u8::from(i == srv),
                    points_sum: self.points_sum[i],
                    distance_run: self.rng.gen_range(5.0..30.0) + if i == victor { 0.0 } else { 4.0 },
                    ..Default::default()
                };
            }
            self.plant_point(&mut rec, srv, victor, break_pt);
            rec.recompute_derived();
            self.records.push(rec);
        }
    }

    fn plant_point(&mut self, rec: &mut PointRecord, srv: usize, victor: usize, break_pt: bool) {
        let loser = 1 - victor;
        let returner = 1 - srv;
        let rng = &mut self.rng;
        if self.cfg.point_signal {
            let u: f64 = rng.gen();
            let p = &mut rec.players;
            if victor == srv {
                if u < 0.2 {
                    p[victor].ace = 1;
                } else if u < 0.6 {
                    p[victor].winner = 1;
                } else {
                    p[loser].unf_err = 1;
                }
            } else if u < 0.15 {
                p[loser].double_fault = 1;
            } else if u < 0.6 {
                p[victor].winner = 1;
            } else {
                p[loser].unf_err = 1;
            }
        } else {
            for p in rec.players.iter_mut() {
                p.winner = u8::from(rng.gen_bool(0.25));
                p.unf_err = u8::from(rng.gen_bool(0.25));
            }
        }
        if rng.gen_bool(0.2) {
            let at_net = rng.gen_range(0..2);
            rec.players[at_net].net_pt = 1;
            rec.players[at_net].net_pt_won = u8::from(at_net == victor);
        }
        if break_pt {
            rec.players[returner].break_pt = 1;
            if victor == returner {
                rec.players[returner].break_pt_won = 1;
            } else {
                rec.players[returner].break_pt_missed = 1;
            }
        }
        let double_fault = rec.players[srv].double_fault == 1;
        let speed = self.base_speed[srv] + rng.gen_range(-8.0..8.0) - if double_fault { 15.0 } else { 0.0 };
        let speed = (speed * 10.0).round() / 10.0;
        rec.players[srv].serve_speed = if rng.gen_bool(self.cfg.missing_speed) { None } else { Some(speed) };
        rec.players[srv].serve_depth = u8::from(rng.gen_bool(0.5));
        if rec.players[srv].ace == 0 && !double_fault {
            rec.players[returner].return_depth = u8::from(rng.gen_bool(0.5));
        }
    }
}

fn generate_match(cfg: &SynthConfig, match_id: String, seed: u64) -> Vec<PointRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = [format!("Player {}", rng.gen_range(100..1000)), format!("Player {}", rng.gen_range(100..1000))];
    let base_speed = [rng.gen_range(100.0..125.0), rng.gen_range(100.0..125.0)];
    let mut st = MatchState {
        rng,
        cfg: cfg.clone(),
        records: Vec::new(),
        match_id,
        names,
        base_speed,
        sets_won: [0, 0],
        points_sum: [0, 0],
        elapsed: 0,
    };
    let sets_needed = cfg.best_of / 2 + 1;
    let mut server = st.rng.gen_range(0..2);
    let mut last_game_winner: Option<usize> = None;
    let mut set_no = 0;
    while st.sets_won.iter().all(|&s| s < sets_needed) {
        set_no += 1;
        let mut games = [0u32; 2];
        let mut game_no = 0;
        loop {
            game_no += 1;
            let intended = match last_game_winner {
                None => st.rng.gen_range(0..2),
                Some(w) if st.rng.gen_bool(cfg.carryover) => w,
                Some(w) => 1 - w,
            };
            st.play_game(set_no, game_no, games, server, intended);
            games[intended] += 1;
            last_game_winner = Some(intended);
            server = 1 - server;
            let [a, b] = games;
            let set_over = (a.max(b) >= 6 && a.abs_diff(b) >= 2) || a.max(b) == 7;
            if set_over {
                let w = usize::from(b > a);
                st.sets_won[w] += 1;
                st.records.last_mut().unwrap().set_victor = w as u8 + 1;
                break;
            }
        }
    }
    st.records
}

/// Raw synthetic points (speeds in mph, some missing), matches in id order.
pub fn generate_synthetic_records(count: usize, seed: u64, cfg: &SynthConfig) -> Result<Vec<PointRecord>> {
    if cfg.best_of != 3 && cfg.best_of != 5 {
        return Err(Error::Config(format!("best_of must be 3 or 5, got {}", cfg.best_of)));
    }
    for (name, p) in [("carryover", cfg.carryover), ("point_bias", cfg.point_bias), ("missing_speed", cfg.missing_speed)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("{name} must be a probability, got {p}")));
        }
    }
    if cfg.point_bias <= 0.0 {
        return Err(Error::Config("point_bias must be positive".into()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for idx in 0..count {
        let match_seed: u64 = master.gen();
        out.extend(generate_match(cfg, format!("synth-{seed}-{idx:04}"), match_seed));
    }
    Ok(out)
}

/// Synthetic matches passed through imputation, normalization and sequencing.
pub fn generate_synthetic_matches(count: usize, seed: u64, cfg: &SynthConfig) -> Result<Vec<MatchSequence>> {
    let records = generate_synthetic_records(count, seed, cfg)?;
    ingest_records(records, seed)?.sequences()
}
