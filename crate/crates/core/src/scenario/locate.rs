//! Maps a field path inside a JSON document back to a source line.

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PathSeg {
    Key(String),
    Index(usize),
}

/// Dotted field path such as `robot.chains[0].links[1].mass`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FieldPath(pub Vec<PathSeg>);

impl FieldPath {
    pub fn root() -> Self {
        Self(Vec::new())
    }

    pub fn key(&self, k: &str) -> Self {
        let mut p = self.0.clone();
        p.push(PathSeg::Key(k.to_string()));
        Self(p)
    }

    pub fn index(&self, i: usize) -> Self {
        let mut p = self.0.clone();
        p.push(PathSeg::Index(i));
        Self(p)
    }
}

impl fmt::Display for FieldPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("<root>");
        }
        for (n, seg) in self.0.iter().enumerate() {
            match seg {
                PathSeg::Key(k) if n == 0 => write!(f, "{k}")?,
                PathSeg::Key(k) => write!(f, ".{k}")?,
                PathSeg::Index(i) => write!(f, "[{i}]")?,
            }
        }
        Ok(())
    }
}

struct Scanner<'a> {
    b: &'a [u8],
    pos: usize,
}

impl Scanner<'_> {
    fn ws(&mut self) {
        while self.pos < self.b.len() && self.b[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.ws();
        self.b.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    /// Raw contents of a string literal, escapes left as written.
    fn string(&mut self) -> Option<&[u8]> {
        if !self.eat(b'"') {
            return None;
        }
        let start = self.pos;
        while self.pos < self.b.len() {
            match self.b[self.pos] {
                b'\\' => self.pos += 2,
                b'"' => {
                    self.pos += 1;
                    return Some(&self.b[start..self.pos - 1]);
                }
                _ => self.pos += 1,
            }
        }
        None
    }

    fn skip_value(&mut self) -> Option<()> {
        match self.peek()? {
            b'"' => self.string().map(|_| ()),
            b'{' | b'[' => {
                let mut depth = 0usize;
                loop {
                    match self.peek()? {
                        b'"' => {
                            self.string()?;
                            continue;
                        }
                        b'{' | b'[' => depth += 1,
                        b'}' | b']' => {
                            depth -= 1;
                            if depth == 0 {
                                self.pos += 1;
                                return Some(());
                            }
                        }
                        _ => {}
                    }
                    self.pos += 1;
                }
            }
            _ => {
                while self.pos < self.b.len() && !matches!(self.b[self.pos], b',' | b'}' | b']') && !self.b[self.pos].is_ascii_whitespace() {
                    self.pos += 1;
                }
                Some(())
            }
        }
    }

    /// Moves to the value at `seg` inside the container at the cursor.
    fn enter(&mut self, seg: &PathSeg) -> Option<()> {
        match seg {
            PathSeg::Key(k) => {
                if !self.eat(b'{') {
                    return None;
                }
                loop {
                    let name = self.string()?.to_vec();
                    if !self.eat(b':') {
                        return None;
                    }
                    if name == k.as_bytes() {
                        self.ws();
                        return Some(());
                    }
                    self.skip_value()?;
                    if !self.eat(b',') {
                        return None;
                    }
                }
            }
            PathSeg::Index(i) => {
                if !self.eat(b'[') {
                    return None;
                }
                for _ in 0..*i {
                    self.skip_value()?;
                    if !self.eat(b',') {
                        return None;
                    }
                }
                self.ws();
                Some(())
            }
        }
    }
}

/// 1-based line of the value at `path`, or of the deepest enclosing value
/// that exists.
pub fn line_of(text: &str, path: &FieldPath) -> Option<usize> {
    let mut s = Scanner { b: text.as_bytes(), pos: 0 };
    s.ws();
    let mut found = s.pos;
    for seg in &path.0 {
        if s.enter(seg).is_none() {
            break;
        }
        found = s.pos;
    }
    if text.trim().is_empty() {
        return None;
    }
    Some(1 + text.as_bytes()[..found.min(text.len())].iter().filter(|&&c| c == b'\n').count())
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = r#"{
  "a": 1,
  "robot": {
    "name": "x\"y",
    "chains": [
      {"links": [{"mass": 1}]},
      {
        "links": [
          {"mass": 2},
          {"mass": -3}
        ]
      }
    ]
  }
}"#;

    #[test]
    fn finds_nested_fields() {
        let p = FieldPath::root().key("robot").key("chains").index(1).key("links").index(1).key("mass");
        assert_eq!(p.to_string(), "robot.chains[1].links[1].mass");
        assert_eq!(line_of(DOC, &p), Some(10));
        assert_eq!(line_of(DOC, &FieldPath::root().key("a")), Some(2));
    }

    #[test]
    fn missing_field_falls_back_to_parent() {
        let p = FieldPath::root().key("robot").key("gravity");
        assert_eq!(line_of(DOC, &p), Some(3));
    }
}
