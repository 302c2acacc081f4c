use std::process::ExitCode;

fn main() -> ExitCode {
    match soar_cli::run(std::env::args_os()) {
        Ok(Some(info)) => {
            print!("{info}");
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", soar_cli::error_line(&err));
            if soar_cli::error_kind(&err) == "usage" {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
