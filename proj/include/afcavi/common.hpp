#pragma once

#include <stdexcept>
#include <string>

namespace afcavi {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input files (ragged rows, bad cells, missing headers).
class ParseError : public Error {
public:
    using Error::Error;
};

// Well-formed input that violates a contract (constant column, overlapping
// blocks, out-of-simplex dosage, infeasible prior, ...).
class ValidationError : public Error {
public:
    using Error::Error;
};

// Non-finite intermediate inside the solver; carries (trait, snp, iteration)
// context in the message.
class NumericalError : public Error {
public:
    using Error::Error;
};

} // namespace afcavi
