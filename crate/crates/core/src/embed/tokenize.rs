//! C-family tokenizer used for both source bodies and decompiled pseudo-code.
//!
//! | input                                   | token                         |
//! |-----------------------------------------|-------------------------------|
//! | whitespace                              | dropped                       |
//! | `// ...` to end of line, `/* ... */`    | dropped                       |
//! | `[A-Za-z_][A-Za-z0-9_]*`                | identifier / keyword          |
//! | digit, or `.` followed by a digit       | number (`[A-Za-z0-9_.]*`, plus a sign right after an exponent marker) |
//! | `"..."`, `'...'` (backslash escapes)    | one literal token, quotes kept |
//! | three/two-character operators below     | operator (longest match)      |
//! | any other character                     | single-character punctuation  |
//!
//! Operators matched greedily: `<<=` `>>=` `...` `->` `++` `--` `<<` `>>`
//! `<=` `>=` `==` `!=` `&&` `||` `+=` `-=` `*=` `/=` `%=` `&=` `|=` `^=`
//! `::` `##`.

const OPS3: [&str; 3] = ["<<=", ">>=", "..."];
const OPS2: [&str; 21] = [
    "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "+=", "-=", "*=", "/=", "%=",
    "&=", "|=", "^=", "::", "##",
];

pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    let at = |k: usize| chars.get(k).copied();

    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '/' && at(i + 1) == Some('/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c == '/' && at(i + 1) == Some('*') {
            i += 2;
            while i < chars.len() && !(chars[i] == '*' && at(i + 1) == Some('/')) {
                i += 1;
            }
            i = (i + 2).min(chars.len());
            continue;
        }

        let start = i;
        if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
        } else if c.is_ascii_digit() || (c == '.' && at(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let hex = c == '0' && matches!(at(i + 1), Some('x' | 'X'));
            i += 1;
            while i < chars.len() {
                let d = chars[i];
                let exponent_sign = (d == '+' || d == '-')
                    && match chars[i - 1] {
                        'e' | 'E' => !hex,
                        'p' | 'P' => true,
                        _ => false,
                    };
                if d.is_ascii_alphanumeric() || d == '_' || d == '.' || exponent_sign {
                    i += 1;
                } else {
                    break;
                }
            }
        } else if c == '"' || c == '\'' {
            i += 1;
            while i < chars.len() && chars[i] != c {
                if chars[i] == '\\' {
                    i += 1;
                }
                i += 1;
            }
            i = (i + 1).min(chars.len());
        } else {
            let rest: String = chars[i..chars.len().min(i + 3)].iter().collect();
            let len = OPS3
                .iter()
                .find(|op| rest.starts_with(**op))
                .map(|_| 3)
                .or_else(|| OPS2.iter().find(|op| rest.starts_with(**op)).map(|_| 2))
                .unwrap_or(1);
            i += len;
        }
        tokens.push(chars[start..i].iter().collect());
    }
    tokens
}
