//! Output sinks and number formatting shared by the commands.

use std::io::Write;
use std::path::Path;

use mate_core::cost::Flops;

use crate::error::CliError;
use crate::SCHEMA_VERSION;

/// `# mate <command> v1` — first line of every table and report.
pub fn header(command: &str) -> String {
    format!("# mate {command} v{SCHEMA_VERSION}\n")
}

/// Writes `text` to `out`, or to stdout when `out` is `None`.
pub fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::io(path, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|()| stdout.flush())
                .map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}

/// Exact decimal when the denominator has only factors 2 and 5, otherwise
/// `p/q`.
pub fn exact(r: &Flops) -> String {
    let (p, q) = (*r.numer(), *r.denom());
    if q == 1 {
        return p.to_string();
    }
    let (mut twos, mut fives, mut rest) = (0u32, 0u32, q);
    while rest % 2 == 0 {
        rest /= 2;
        twos += 1;
    }
    while rest % 5 == 0 {
        rest /= 5;
        fives += 1;
    }
    if rest != 1 {
        return format!("{p}/{q}");
    }
    let digits = twos.max(fives);
    // p/q = p · 2^(digits−twos) · 5^(digits−fives) / 10^digits
    let scaled = p
        .checked_mul(2u128.pow(digits - twos))
        .and_then(|v| v.checked_mul(5u128.pow(digits - fives)));
    let Some(scaled) = scaled else {
        return format!("{p}/{q}");
    };
    let unit = 10u128.pow(digits);
    format!("{}.{:0width$}", scaled / unit, scaled % unit, width = digits as usize)
}
