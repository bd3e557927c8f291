#pragma once

#include <stdexcept>
#include <string>

namespace latent_align {

// Error categories map one-to-one onto CLI exit codes.
enum class ErrorKind {
    argument,   // caller violated a precondition
    config,     // missing or malformed configuration
    data,       // dataset content problem (bad shape, duplicates, missing frames)
    not_found,  // unknown sample or file
    integrity,  // checksum mismatch or malformed blob
    io,         // filesystem failure
    backend,    // encoder / denoiser / oracle failure
    transport,  // network failure talking to a remote endpoint
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string & what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline Error argument_error(const std::string & what) { return {ErrorKind::argument, what}; }
inline Error config_error(const std::string & what) { return {ErrorKind::config, what}; }
inline Error data_error(const std::string & what) { return {ErrorKind::data, what}; }
inline Error not_found_error(const std::string & what) { return {ErrorKind::not_found, what}; }
inline Error integrity_error(const std::string & what) { return {ErrorKind::integrity, what}; }
inline Error io_error(const std::string & what) { return {ErrorKind::io, what}; }
inline Error backend_error(const std::string & what) { return {ErrorKind::backend, what}; }
inline Error transport_error(const std::string & what) { return {ErrorKind::transport, what}; }

// 0 success, 2 config error, 3 data error, 4 backend/transport error.
inline int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::argument:
        case ErrorKind::config: return 2;
        case ErrorKind::data:
        case ErrorKind::not_found:
        case ErrorKind::integrity:
        case ErrorKind::io: return 3;
        case ErrorKind::backend:
        case ErrorKind::transport: return 4;
    }
    return 1;
}

}  // namespace latent_align
