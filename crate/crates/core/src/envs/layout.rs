//! Plain-text grid maps: `.` free, `#` hazard, `G` goal, `B` box, `A` agent.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub type Cell = (i32, i32);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub width: usize,
    pub height: usize,
    pub agent: Cell,
    pub goal: Option<Cell>,
    pub box_pos: Option<Cell>,
    pub hazards: Vec<Cell>,
}

impl Layout {
    pub fn load(path: &Path) -> Result<Self> {
        std::fs::read_to_string(path)?.parse()
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let rows: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        if rows.is_empty() {
            return Err(Error::parse(1, "empty layout"));
        }
        let width = rows[0].1.chars().count();
        let mut agent = None;
        let mut goal = None;
        let mut box_pos = None;
        let mut hazards = Vec::new();
        for (y, (line_no, row)) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(Error::parse(*line_no, format!("expected {width} cells per row")));
            }
            for (x, ch) in row.chars().enumerate() {
                let cell = (x as i32, y as i32);
                let slot = match ch {
                    '.' => continue,
                    '#' => {
                        hazards.push(cell);
                        continue;
                    }
                    'A' => &mut agent,
                    'G' => &mut goal,
                    'B' => &mut box_pos,
                    other => {
                        return Err(Error::parse(*line_no, format!("unknown cell '{other}'")));
                    }
                };
                if slot.replace(cell).is_some() {
                    return Err(Error::parse(*line_no, format!("duplicate '{ch}'")));
                }
            }
        }
        let agent = agent.ok_or_else(|| Error::parse(rows.len(), "layout has no agent 'A'"))?;
        Ok(Layout {
            width,
            height: rows.len(),
            agent,
            goal,
            box_pos,
            hazards,
        })
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for y in 0..self.height as i32 {
            for x in 0..self.width as i32 {
                let c = (x, y);
                let ch = if c == self.agent {
                    'A'
                } else if Some(c) == self.goal {
                    'G'
                } else if Some(c) == self.box_pos {
                    'B'
                } else if self.hazards.contains(&c) {
                    '#'
                } else {
                    '.'
                };
                write!(f, "{ch}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_prints() {
        let text = "A...\n.#..\n..BG\n";
        let layout: Layout = text.parse().unwrap();
        assert_eq!((layout.width, layout.height), (4, 3));
        assert_eq!(layout.agent, (0, 0));
        assert_eq!(layout.hazards, vec![(1, 1)]);
        assert_eq!(layout.box_pos, Some((2, 2)));
        assert_eq!(layout.goal, Some((3, 2)));
        assert_eq!(layout.to_string(), text);
    }

    #[test]
    fn rejects_bad_maps() {
        assert!("....\n...\n".parse::<Layout>().is_err());
        assert!("A.x\n".parse::<Layout>().is_err());
        assert!("...\n".parse::<Layout>().is_err());
        assert!("AA.\n".parse::<Layout>().is_err());
        assert!("".parse::<Layout>().is_err());
    }
}
