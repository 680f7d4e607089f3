#pragma once

#include <stdexcept>
#include <string>

namespace damkit {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class EmptyMask : public Error {
public:
    EmptyMask() : Error("mask has no set pixel") {}
};

class InvalidBox : public Error {
public:
    using Error::Error;
};

class ShapeMismatch : public Error {
public:
    using Error::Error;
};

class NonFinite : public Error {
public:
    using Error::Error;
};

class NonDeterministic : public Error {
public:
    using Error::Error;
};

class EmptyInput : public Error {
public:
    using Error::Error;
};

class VocabOverflow : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class FixtureError : public Error {
public:
    using Error::Error;
};

class JudgeFailure : public Error {
public:
    using Error::Error;
};

class AnnotatorFailure : public Error {
public:
    using Error::Error;
};

class SummarizerFailure : public Error {
public:
    using Error::Error;
};

}  // namespace damkit
