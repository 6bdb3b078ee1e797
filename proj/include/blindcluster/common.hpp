#pragma once

#include <stdexcept>
#include <string>

namespace blindcluster {

// Error taxonomy, aligned with the CLI exit codes:
//   param_error   -> 2 (configuration / validation)
//   format_error  -> 3 (malformed data files)
//   io_error      -> 3 (filesystem failures)
//   numeric_error -> 4 (divergence, non-finite values, undefined metrics)
struct param_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct format_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace blindcluster
