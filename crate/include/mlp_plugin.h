/*
 * Plugin interface for mlp extern predicates.
 *
 * A plugin is a shared library exporting:
 *
 *   const uint32_t mlp_abi_version;        must equal MLP_API_VERSION
 *   void mlp_init(const MlpHostCallTable *) called once when the library loads
 *   void <entry>(void)                      one per extern predicate
 *
 * Entry functions read their inputs from argument registers with the get_*
 * functions and deliver results with the return_* functions, which unify the
 * value with the register's current term. Registers are numbered from 1.
 *
 * A failed unification, a call to fail() or a type mismatch in a get_*
 * function makes the predicate fail once the entry function returns. After
 * that point every table function does nothing and returns zero, so an entry
 * function should simply return.
 *
 * Table functions may only be called from inside an entry function, on the
 * thread that invoked it.
 */
#ifndef MLP_PLUGIN_H
#define MLP_PLUGIN_H

#include <stddef.h>
#include <stdint.h>

#define MLP_API_VERSION 2

#if defined(_WIN32)
#define MLP_EXPORT __declspec(dllexport)
#else
#define MLP_EXPORT __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef struct MlpHostCallTable {
    uint32_t api_version;

    int64_t (*get_int)(int i);
    double (*get_real)(int i);
    /* Length in bytes of the string in register i. */
    size_t (*get_string_len)(int i);
    /* Copies at most cap bytes, without a terminator; returns bytes copied. */
    size_t (*get_string)(int i, char *buf, size_t cap);

    void (*return_int)(int i, int64_t v);
    void (*return_real)(int i, double v);
    void (*return_string)(int i, const char *bytes, size_t len);

    void (*fail)(void);

    /* Since version 2: flat constructor terms with int arguments. */

    /* Argument k (from 1) of the compound term in register i. */
    int64_t (*get_ctor_arg_int)(int i, int k);
    /* Unifies register i with name(_, ..., _) of the given arity. */
    void (*return_ctor)(int i, const char *name, int arity);
    /* Unifies argument k of the last return_ctor term with v. */
    void (*set_ctor_arg_int)(int k, int64_t v);
} MlpHostCallTable;

#ifdef __cplusplus
}
#endif

#endif
