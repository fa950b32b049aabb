fn main() {
    std::process::exit(idiom_cloze::cli::main_with(std::env::args_os()));
}
