use std::process::ExitCode;

fn main() -> ExitCode {
    let (body, code) = gpw::cli::run(std::env::args_os());
    println!("{body}");
    ExitCode::from(code as u8)
}
