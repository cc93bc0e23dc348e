//! ASCII grid overlays for the CLI.
//!
//! Each cell is drawn as two characters: a feature glyph (`A`, `B`, ... for the
//! dominant feature, `.` for an all-zero row) and an overlay mark.

use crate::error::{Error, Result};
use crate::mdp::{Environment, FeatureMap, GridLayout};
use crate::Scalar;

const ARROWS: [char; 4] = ['^', 'v', '<', '>'];

#[derive(Clone, Debug)]
pub enum Layer {
    /// One action per state, drawn as arrows (grid action order).
    Policy(Vec<usize>),
    /// States probed by a test.
    Probes(Vec<usize>),
    /// A visited state sequence; the start is `S`.
    Path(Vec<usize>),
    Marks(char, Vec<usize>),
}

pub fn feature_glyph<T: Scalar>(row: &[T]) -> char {
    let best = row
        .iter()
        .enumerate()
        .filter(|(_, x)| **x != T::zero())
        .fold(None, |acc: Option<(usize, T)>, (i, &x)| match acc {
            Some((_, b)) if b.abs() >= x.abs() => acc,
            _ => Some((i, x)),
        });
    match best {
        Some((i, _)) if i < 26 => (b'A' + i as u8) as char,
        Some(_) => '#',
        None => '.',
    }
}

fn layout<T: Scalar>(env: &Environment<T>) -> Result<GridLayout> {
    env.layout()
        .ok_or_else(|| Error::Precondition("environment has no grid layout".into()))
}

/// Renders the grid with `layers` applied in order (later layers win).
/// Terminal cells carry `$` unless overdrawn.
pub fn render_grid<T: Scalar>(env: &Environment<T>, features: &FeatureMap<T>, layers: &[Layer]) -> Result<String> {
    let GridLayout { width, height } = layout(env)?;
    let n = env.n_states();
    let mut marks: Vec<char> = (0..n).map(|s| if env.is_terminal(s) { '$' } else { ' ' }).collect();
    let mut set = |s: usize, c: char| -> Result<()> {
        *marks
            .get_mut(s)
            .ok_or_else(|| Error::Precondition(format!("state {s} out of range")))? = c;
        Ok(())
    };
    for layer in layers {
        match layer {
            Layer::Policy(actions) => {
                for (s, &a) in actions.iter().enumerate() {
                    if !env.is_terminal(s) {
                        set(s, ARROWS.get(a).copied().unwrap_or('?'))?;
                    }
                }
            }
            Layer::Probes(states) => {
                for &s in states {
                    set(s, '?')?;
                }
            }
            Layer::Path(states) => {
                for &s in states.iter().skip(1) {
                    set(s, '*')?;
                }
                if let Some(&s) = states.first() {
                    set(s, 'S')?;
                }
            }
            Layer::Marks(c, states) => {
                for &s in states {
                    set(s, *c)?;
                }
            }
        }
    }
    let mut out = String::new();
    for y in 0..height {
        let line: Vec<String> = (0..width)
            .map(|x| {
                let s = y * width + x;
                format!("{}{}", feature_glyph(features.row(s)), marks[s])
            })
            .collect();
        out.push_str(line.join(" ").trim_end());
        out.push('\n');
    }
    Ok(out)
}

/// Two grids side by side under headers `[1]` and `[2]`.
pub fn render_side_by_side(left: &str, right: &str) -> String {
    let l: Vec<&str> = left.lines().collect();
    let r: Vec<&str> = right.lines().collect();
    let w = l.iter().map(|s| s.chars().count()).max().unwrap_or(0).max(3);
    let mut out = format!("{:<w$}    {}\n", "[1]", "[2]");
    for i in 0..l.len().max(r.len()) {
        let a = l.get(i).copied().unwrap_or("");
        let b = r.get(i).copied().unwrap_or("");
        out.push_str(format!("{a:<w$}    {b}").trim_end());
        out.push('\n');
    }
    out
}
