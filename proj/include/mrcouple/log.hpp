#pragma once

namespace mrcouple {

/// Sets the global log level from MRCOUPLE_LOG (error | info | debug).
/// Unset or unrecognized values fall back to `info`.
void configure_logging_from_env();

}  // namespace mrcouple
