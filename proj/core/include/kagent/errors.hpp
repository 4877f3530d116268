#pragma once

#include <stdexcept>
#include <string>

namespace kagent {

/// Base of every exception thrown by the engine.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// task-model
class ParseError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    ValidationError(std::string task_id, const std::string& message)
        : Error(task_id.empty() ? message : "task '" + task_id + "': " + message),
          task_id_(std::move(task_id)) {}

    const std::string& task_id() const noexcept { return task_id_; }

private:
    std::string task_id_;
};

// llm-gateway. Each backend error carries the backend identity.
class BackendError : public Error {
public:
    BackendError(std::string backend, const std::string& message)
        : Error("[" + backend + "] " + message), backend_(std::move(backend)) {}

    const std::string& backend() const noexcept { return backend_; }

private:
    std::string backend_;
};

class TransportError : public BackendError {
public:
    using BackendError::BackendError;
};

class AuthError : public BackendError {
public:
    using BackendError::BackendError;
};

class TimeoutError : public BackendError {
public:
    using BackendError::BackendError;
};

class EmptyTrace : public Error {
public:
    EmptyTrace() : Error("reflection requires a non-empty error trace") {}
};

class EmptyHistory : public Error {
public:
    EmptyHistory() : Error("optimization requires a non-empty performance history") {}
};

class IncorrectEntry : public Error {
public:
    using Error::Error;
};

// executor
class ExecutorUnavailable : public Error {
public:
    using Error::Error;
};

// metrics-scaling
class EmptyLog : public Error {
public:
    EmptyLog() : Error("log contains no tasks") {}
};

class NotExecOk : public Error {
public:
    NotExecOk() : Error("speedup is only defined for kernels that pass every test") {}
};

class DomainError : public Error {
public:
    using Error::Error;
};

class MismatchedReplicas : public Error {
public:
    using Error::Error;
};

}  // namespace kagent
