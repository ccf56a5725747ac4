fn main() {
    std::process::exit(latent_states::cli::main_from_env());
}
