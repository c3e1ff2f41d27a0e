//! Stdio protocol server around a mock scorer: one JSON request per input
//! line, one JSON response per output line. This is what `--scorer cmd:...`
//! talks to, and it doubles as a reference implementation of the server
//! side of the protocol.

use std::io::{BufRead, Write};

use textpriv::scoring::{encode_line, AnyRequest, MaskedLmScorer, MockScorer};

/// Serve requests from `input` until EOF. Malformed lines abort with an
/// error (the client treats the closed pipe as a transport failure).
pub fn serve<R: BufRead, W: Write>(
    mock: &MockScorer,
    input: R,
    mut output: W,
) -> anyhow::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let request: AnyRequest = textpriv::scoring::decode_line(&line)
            .map_err(|e| anyhow::anyhow!("bad request line: {e}"))?;
        let response = match request {
            AnyRequest::Masked(req) => encode_line(&mock.score_masked(&req)?)?,
            AnyRequest::NextSentence(req) => encode_line(&mock.score_next_sentence(&req)?)?,
        };
        output.write_all(response.as_bytes())?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}
