pub mod asymptotics;
pub mod cli;
pub mod flow;
pub mod profiles;
pub mod sfde;
pub mod prox;
pub mod stepfn;
