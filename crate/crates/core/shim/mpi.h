/* Stand-in for <mpi.h> used to replay generated proxy apps without MPI.
 *
 * Every MPI call is a no-op. Terminal functions log their key through
 * PROXY_LOG as a line "T <key>" on stdout. The rank and world size come from
 * the PROXY_SHIM_RANK and PROXY_SHIM_SIZE environment variables.
 *
 * Build: cc -std=c99 -I<dir of this file> proxy.c
 */
#ifndef PROXY_SHIM_MPI_H
#define PROXY_SHIM_MPI_H

#include <stdio.h>
#include <stdlib.h>

typedef int MPI_Comm;
typedef int MPI_Datatype;
typedef int MPI_Op;
typedef int MPI_Request;
typedef struct {
    int MPI_SOURCE;
    int MPI_TAG;
    int MPI_ERROR;
} MPI_Status;

#define MPI_COMM_WORLD 0
#define MPI_COMM_NULL (-1)
#define MPI_BYTE 1
#define MPI_BOR 1
#define MPI_ANY_SOURCE (-1)
#define MPI_ANY_TAG (-1)
#define MPI_UNDEFINED (-32766)
#define MPI_STATUS_IGNORE ((MPI_Status *)0)
#define MPI_SUCCESS 0

#define PROXY_LOG(key) printf("T %s\n", key)

static int proxy_shim_env(const char *name, int fallback)
{
    const char *v = getenv(name);
    return v ? atoi(v) : fallback;
}

static int proxy_shim_next_comm = 1;

static inline int MPI_Init(int *argc, char ***argv)
{
    (void)argc;
    (void)argv;
    return MPI_SUCCESS;
}

static inline int MPI_Finalize(void)
{
    fflush(stdout);
    return MPI_SUCCESS;
}

static inline int MPI_Abort(MPI_Comm comm, int code)
{
    (void)comm;
    fflush(stdout);
    exit(code);
}

static inline int MPI_Comm_rank(MPI_Comm comm, int *rank)
{
    (void)comm;
    *rank = proxy_shim_env("PROXY_SHIM_RANK", 0);
    return MPI_SUCCESS;
}

static inline int MPI_Comm_size(MPI_Comm comm, int *size)
{
    (void)comm;
    *size = proxy_shim_env("PROXY_SHIM_SIZE", 1);
    return MPI_SUCCESS;
}

static inline int MPI_Send(const void *buf, int count, MPI_Datatype t, int dest, int tag, MPI_Comm comm)
{
    (void)buf; (void)count; (void)t; (void)dest; (void)tag; (void)comm;
    return MPI_SUCCESS;
}

static inline int MPI_Recv(void *buf, int count, MPI_Datatype t, int src, int tag, MPI_Comm comm,
                           MPI_Status *status)
{
    (void)buf; (void)count; (void)t; (void)src; (void)tag; (void)comm; (void)status;
    return MPI_SUCCESS;
}

static inline int MPI_Isend(const void *buf, int count, MPI_Datatype t, int dest, int tag, MPI_Comm comm,
                            MPI_Request *req)
{
    (void)buf; (void)count; (void)t; (void)dest; (void)tag; (void)comm;
    *req = 1;
    return MPI_SUCCESS;
}

static inline int MPI_Irecv(void *buf, int count, MPI_Datatype t, int src, int tag, MPI_Comm comm,
                            MPI_Request *req)
{
    (void)buf; (void)count; (void)t; (void)src; (void)tag; (void)comm;
    *req = 1;
    return MPI_SUCCESS;
}

static inline int MPI_Wait(MPI_Request *req, MPI_Status *status)
{
    (void)status;
    *req = 0;
    return MPI_SUCCESS;
}

static inline int MPI_Sendrecv(const void *sbuf, int scount, MPI_Datatype st, int dest, int stag,
                               void *rbuf, int rcount, MPI_Datatype rt, int src, int rtag,
                               MPI_Comm comm, MPI_Status *status)
{
    (void)sbuf; (void)scount; (void)st; (void)dest; (void)stag;
    (void)rbuf; (void)rcount; (void)rt; (void)src; (void)rtag; (void)comm; (void)status;
    return MPI_SUCCESS;
}

static inline int MPI_Barrier(MPI_Comm comm)
{
    (void)comm;
    return MPI_SUCCESS;
}

static inline int MPI_Allreduce(const void *sbuf, void *rbuf, int count, MPI_Datatype t, MPI_Op op,
                                MPI_Comm comm)
{
    (void)sbuf; (void)rbuf; (void)count; (void)t; (void)op; (void)comm;
    return MPI_SUCCESS;
}

static inline int MPI_Reduce(const void *sbuf, void *rbuf, int count, MPI_Datatype t, MPI_Op op,
                             int root, MPI_Comm comm)
{
    (void)sbuf; (void)rbuf; (void)count; (void)t; (void)op; (void)root; (void)comm;
    return MPI_SUCCESS;
}

static inline int MPI_Bcast(void *buf, int count, MPI_Datatype t, int root, MPI_Comm comm)
{
    (void)buf; (void)count; (void)t; (void)root; (void)comm;
    return MPI_SUCCESS;
}

static inline int MPI_Alltoall(const void *sbuf, int scount, MPI_Datatype st, void *rbuf, int rcount,
                               MPI_Datatype rt, MPI_Comm comm)
{
    (void)sbuf; (void)scount; (void)st; (void)rbuf; (void)rcount; (void)rt; (void)comm;
    return MPI_SUCCESS;
}

static inline int MPI_Comm_split(MPI_Comm comm, int color, int key, MPI_Comm *newcomm)
{
    (void)comm; (void)key;
    *newcomm = color == MPI_UNDEFINED ? MPI_COMM_NULL : proxy_shim_next_comm++;
    return MPI_SUCCESS;
}

static inline int MPI_Comm_dup(MPI_Comm comm, MPI_Comm *newcomm)
{
    (void)comm;
    *newcomm = proxy_shim_next_comm++;
    return MPI_SUCCESS;
}

static inline int MPI_Comm_free(MPI_Comm *comm)
{
    *comm = MPI_COMM_NULL;
    return MPI_SUCCESS;
}

#endif
