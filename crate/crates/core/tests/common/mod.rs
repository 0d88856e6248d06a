use conceptgrid::template::ParseError;

/// One mutation per error code, each built to trip exactly that check.
pub fn mutate(text: &str, code: ParseError) -> String {
    match code {
        ParseError::MissingTag => text.replacen("</answer>", "", 1),
        ParseError::DuplicateTag => text.replacen("<think>", "<think><rule>", 1),
        ParseError::BadOrder => {
            let a = text.find("<think>").unwrap();
            let b = text.find("<rule>").unwrap();
            let c = text.find("<check>").unwrap();
            format!("{}{} {}{}", &text[..a], text[b..c].trim_end(), &text[a..b], &text[c..])
        }
        ParseError::BadBox => {
            let s = text.find("<check>").unwrap() + "<check>".len();
            let e = text.find("</check>").unwrap();
            format!("{}[0.1, 0.2, 0.3]{}", &text[..s], &text[e..])
        }
        ParseError::BadAnswer => {
            let s = text.find("<answer>").unwrap() + "<answer>".len();
            let e = text.find("</answer>").unwrap();
            format!("{}one two three four{}", &text[..s], &text[e..])
        }
        ParseError::TrailingGarbage => format!("{text} sure"),
    }
}
