pub mod bits;
pub mod covert;
pub mod gateway;
pub mod signalling;
pub mod token;
pub mod watermark;
pub mod sim;
