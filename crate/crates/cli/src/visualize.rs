//! Roll out each affordance head's option from a lattice of start states and
//! dump the resulting trajectories.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use grasp::agent::Agent;
use grasp::env::{EnvKind, TracePoint};
use grasp::trainer::stream;

use crate::svg;
use crate::CliError;

/// Object layout across start states.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// The same objects/goal for every start.
    Fixed,
    /// A fresh layout per start.
    Varied,
}

impl std::str::FromStr for Layout {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fixed" => Ok(Layout::Fixed),
            "varied" => Ok(Layout::Varied),
            o => Err(format!("unknown layout `{o}` (fixed | varied)")),
        }
    }
}

/// `cols × rows` lattice of start states.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lattice {
    pub cols: usize,
    pub rows: usize,
}

impl std::str::FromStr for Lattice {
    type Err = String;
    /// `3x3` or a single side length `3`.
    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("bad grid `{s}` (expected COLSxROWS)");
        let (c, r) = s.split_once('x').unwrap_or((s, s));
        let cols: usize = c.trim().parse().map_err(|_| bad())?;
        let rows: usize = r.trim().parse().map_err(|_| bad())?;
        if cols == 0 || rows == 0 {
            return Err(bad());
        }
        Ok(Lattice { cols, rows })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GridSpec {
    pub lattice: Lattice,
    pub layout: Layout,
    pub seed: u64,
    /// Endpoint-to-object matching radius.
    pub delta: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            lattice: Lattice { cols: 3, rows: 3 },
            layout: Layout::Fixed,
            seed: 0,
            delta: 0.1,
        }
    }
}

/// Cell centers of the lattice over the unit square, row by row.
pub fn grid_starts(l: Lattice) -> Vec<[f64; 2]> {
    let c = |i: usize, n: usize| (i as f64 + 0.5) / n as f64;
    (0..l.rows)
        .flat_map(|j| (0..l.cols).map(move |i| [c(i, l.cols), c(j, l.rows)]))
        .collect()
}

#[derive(Clone, Debug)]
pub struct HeadRollout {
    pub head: usize,
    pub action: Vec<f64>,
    /// Start point followed by one point per primitive step.
    pub trace: Vec<TracePoint>,
    pub reward: f64,
    pub event: &'static str,
}

impl HeadRollout {
    pub fn endpoint(&self) -> [f64; 2] {
        self.trace.last().map(|p| p.pos).unwrap_or([f64::NAN; 2])
    }
}

#[derive(Clone, Debug)]
pub struct StartRollouts {
    pub start: [f64; 2],
    pub landmarks: Vec<[f64; 2]>,
    pub heads: Vec<HeadRollout>,
}

/// One option per head from every lattice start.
pub fn rollout_heads(agent: &Agent, env: EnvKind, grid: &GridSpec) -> Result<Vec<StartRollouts>, CliError> {
    if agent.spec.kind != env {
        return Err(CliError::Other(format!(
            "checkpoint was built for {}, not {}",
            agent.spec.kind.name(),
            env.name()
        )));
    }
    let mut out = Vec::new();
    for (e, &start) in grid_starts(grid.lattice).iter().enumerate() {
        let layout_stream = match grid.layout {
            Layout::Fixed => 0,
            Layout::Varied => e as u64,
        };
        let layout_rng = stream(grid.seed, layout_stream);
        let fresh = || -> Result<_, CliError> {
            let mut w = env.build(agent.cfg.gamma);
            w.reset(&mut layout_rng.clone());
            let obs = w.place_agent(start)?;
            Ok((w, obs))
        };
        let (w, obs) = fresh()?;
        let landmarks = w.landmarks();
        let start_point = w.agent();
        let actions = agent.head_actions(&obs)?;
        let mut heads = Vec::with_capacity(actions.len());
        for (h, action) in actions.into_iter().enumerate() {
            let (mut w, _) = fresh()?;
            let step = w.step(&action)?;
            let mut trace = vec![start_point.clone()];
            trace.extend(step.trace);
            heads.push(HeadRollout {
                head: h,
                action,
                trace,
                reward: step.raw_reward,
                event: step.event,
            });
        }
        out.push(StartRollouts { start, landmarks, heads });
    }
    Ok(out)
}

/// `episode,step,head_index,x,y[,u,v],reward,event` records; reward and the
/// option's event sit on its last step.
pub fn dump(rollouts: &[StartRollouts]) -> String {
    let with_vel = rollouts
        .iter()
        .flat_map(|r| &r.heads)
        .flat_map(|h| &h.trace)
        .any(|p| p.vel.is_some());
    let mut s = String::from(if with_vel {
        "episode,step,head_index,x,y,u,v,reward,event\n"
    } else {
        "episode,step,head_index,x,y,reward,event\n"
    });
    for (e, r) in rollouts.iter().enumerate() {
        for h in &r.heads {
            let last = h.trace.len() - 1;
            for (i, p) in h.trace.iter().enumerate() {
                let _ = write!(s, "{e},{i},{},{},{}", h.head, p.pos[0], p.pos[1]);
                if with_vel {
                    let v = p.vel.unwrap_or([0.0; 2]);
                    let _ = write!(s, ",{},{}", v[0], v[1]);
                }
                let (reward, event) = match i {
                    0 => (0.0, "start"),
                    i if i == last => (h.reward, h.event),
                    _ => (0.0, "move"),
                };
                let _ = writeln!(s, ",{reward},{event}");
            }
        }
    }
    s
}

/// Whether each head can be matched to its own landmark within `delta`.
pub fn injective_match(endpoints: &[[f64; 2]], landmarks: &[[f64; 2]], delta: f64) -> bool {
    fn assign(i: usize, ends: &[[f64; 2]], marks: &[[f64; 2]], used: &mut [bool], delta: f64) -> bool {
        if i == ends.len() {
            return true;
        }
        for (j, m) in marks.iter().enumerate() {
            let d = ((ends[i][0] - m[0]).powi(2) + (ends[i][1] - m[1]).powi(2)).sqrt();
            if !used[j] && d <= delta {
                used[j] = true;
                if assign(i + 1, ends, marks, used, delta) {
                    return true;
                }
                used[j] = false;
            }
        }
        false
    }
    endpoints.len() <= landmarks.len() && assign(0, endpoints, landmarks, &mut vec![false; landmarks.len()], delta)
}

/// Fraction of starts whose head endpoints match landmarks injectively.
pub fn injective_fraction(rollouts: &[StartRollouts], delta: f64) -> f64 {
    if rollouts.is_empty() {
        return 0.0;
    }
    let hits = rollouts
        .iter()
        .filter(|r| {
            let ends: Vec<[f64; 2]> = r.heads.iter().map(HeadRollout::endpoint).collect();
            injective_match(&ends, &r.landmarks, delta)
        })
        .count();
    hits as f64 / rollouts.len() as f64
}

fn render(title: &str, rollouts: &[&StartRollouts], k: usize) -> String {
    let paths: Vec<svg::Path> = rollouts
        .iter()
        .flat_map(|r| &r.heads)
        .map(|h| svg::Path {
            color_index: h.head,
            points: h.trace.iter().map(|p| p.pos).collect(),
        })
        .collect();
    let mut marks: Vec<[f64; 2]> = Vec::new();
    for r in rollouts {
        marks.extend(&r.landmarks);
    }
    let starts: Vec<[f64; 2]> = rollouts.iter().map(|r| r.start).collect();
    let labels: Vec<String> = (0..k).map(|h| format!("head {h}")).collect();
    svg::trajectories(title, &marks, &starts, &paths, &labels)
}

/// Write `trajectories.csv`, an overview SVG (fixed layout) or one SVG per
/// start (varied layout). Returns the written files.
pub fn write_outputs(rollouts: &[StartRollouts], layout: Layout, k: usize, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(out)?;
    let mut files = vec![out.join("trajectories.csv")];
    std::fs::write(&files[0], dump(rollouts))?;
    match layout {
        Layout::Fixed => {
            let all: Vec<&StartRollouts> = rollouts.iter().collect();
            let p = out.join("affordances.svg");
            std::fs::write(&p, render("affordance options, fixed layout", &all, k))?;
            files.push(p);
        }
        Layout::Varied => {
            for (e, r) in rollouts.iter().enumerate() {
                let p = out.join(format!("affordances_start{e}.svg"));
                std::fs::write(&p, render(&format!("affordance options, start {e}"), &[r], k))?;
                files.push(p);
            }
        }
    }
    Ok(files)
}
