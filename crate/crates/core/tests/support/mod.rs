pub mod eddy_checks;
