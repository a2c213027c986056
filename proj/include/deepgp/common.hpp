#pragma once

#include <Eigen/Dense>
#include <sstream>
#include <stdexcept>
#include <string>

namespace deepgp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Matrix factorization or bound evaluation produced unusable numbers.
class NumericalError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

namespace detail {
inline void cat_into(std::ostringstream&) {}
template <typename T, typename... Rest>
void cat_into(std::ostringstream& os, const T& head, const Rest&... rest) {
    os << head;
    cat_into(os, rest...);
}
}  // namespace detail

template <typename... Args>
std::string cat(const Args&... args) {
    std::ostringstream os;
    detail::cat_into(os, args...);
    return os.str();
}

template <typename E = Error, typename... Args>
void require(bool cond, const Args&... args) {
    if (!cond) throw E(cat(args...));
}

}  // namespace deepgp
