//! Exercises the C ABI end to end: values, point-to-point and collective
//! operations from extern "C" parallel functions, async tickets, error
//! reporting, and a loopback cluster driven entirely through the C surface.

use std::ffi::{c_char, c_void, CStr, CString};
use std::ptr;
use std::sync::atomic::{AtomicI32, AtomicU32, Ordering};

use mpignite_ffi::*;

fn last_error() -> String {
    unsafe {
        let raw = mpig_last_error_message();
        if raw.is_null() {
            return String::new();
        }
        let message = CStr::from_ptr(raw).to_string_lossy().into_owned();
        mpig_string_free(raw);
        message
    }
}

macro_rules! ok {
    ($call:expr) => {{
        let status = $call;
        assert_eq!(
            status,
            MpigStatus::Ok,
            "{}: {}",
            stringify!($call),
            last_error()
        );
    }};
}

#[test]
fn value_round_trips_and_type_errors() {
    unsafe {
        let v = mpig_value_i32(42);
        let mut kind = MpigKind::Unit;
        ok!(mpig_value_kind(v, &mut kind));
        assert_eq!(kind, MpigKind::I32);

        let mut out = 0i32;
        ok!(mpig_value_get_i32(v, &mut out));
        assert_eq!(out, 42);

        let mut wrong = 0i64;
        assert_eq!(mpig_value_get_i64(v, &mut wrong), MpigStatus::TypeMismatch);
        assert!(last_error().contains("expected i64"));
        mpig_value_free(v);

        let text = CString::new("ring").unwrap();
        let s = mpig_value_string(text.as_ptr());
        assert!(!s.is_null());
        let mut raw: *mut c_char = ptr::null_mut();
        ok!(mpig_value_get_string(s, &mut raw));
        assert_eq!(CStr::from_ptr(raw).to_str().unwrap(), "ring");
        mpig_string_free(raw);
        mpig_value_free(s);

        let data = [14i32, 32, 50];
        let arr = mpig_value_array_i32(data.as_ptr(), data.len());
        let mut view: *const i32 = ptr::null();
        let mut len = 0usize;
        ok!(mpig_value_get_array_i32(arr, &mut view, &mut len));
        assert_eq!(std::slice::from_raw_parts(view, len), &data);
        let clone = mpig_value_clone(arr);
        mpig_value_free(arr);
        ok!(mpig_value_get_array_i32(clone, &mut view, &mut len));
        assert_eq!(len, 3);
        mpig_value_free(clone);
    }
}

#[test]
fn null_pointers_are_rejected_not_crashes() {
    unsafe {
        let mut out = 0u32;
        assert_eq!(
            mpig_comm_rank(ptr::null(), &mut out),
            MpigStatus::NullPointer
        );
        assert_eq!(
            mpig_value_get_i32(ptr::null(), ptr::null_mut()),
            MpigStatus::NullPointer
        );
        assert_eq!(
            mpig_run_local(None, ptr::null_mut(), 2, ptr::null_mut()),
            MpigStatus::NullPointer
        );
        mpig_value_free(ptr::null_mut());
        mpig_comm_free(ptr::null_mut());
        mpig_results_free(ptr::null_mut());
        mpig_string_free(ptr::null_mut());
    }
}

unsafe extern "C" fn ring_body(comm: *mut MpigComm, _user: *mut c_void) -> *mut MpigValue {
    let mut rank = 0u32;
    let mut size = 0u32;
    if mpig_comm_rank(comm, &mut rank) != MpigStatus::Ok
        || mpig_comm_size(comm, &mut size) != MpigStatus::Ok
    {
        return ptr::null_mut();
    }
    let next = (rank + 1) % size;

    let mut token = 0i32;
    if rank == 0 {
        let zero = mpig_value_i32(0);
        let sent = mpig_comm_send(comm, next, 0, zero);
        mpig_value_free(zero);
        if sent != MpigStatus::Ok {
            return ptr::null_mut();
        }
        let mut received: *mut MpigValue = ptr::null_mut();
        if mpig_comm_receive(comm, size - 1, 0, MpigKind::I32, &mut received) != MpigStatus::Ok {
            return ptr::null_mut();
        }
        if mpig_value_get_i32(received, &mut token) != MpigStatus::Ok {
            mpig_value_free(received);
            return ptr::null_mut();
        }
        mpig_value_free(received);
    } else {
        let mut received: *mut MpigValue = ptr::null_mut();
        if mpig_comm_receive(comm, rank - 1, 0, MpigKind::I32, &mut received) != MpigStatus::Ok {
            return ptr::null_mut();
        }
        if mpig_value_get_i32(received, &mut token) != MpigStatus::Ok {
            mpig_value_free(received);
            return ptr::null_mut();
        }
        mpig_value_free(received);
        token += 1;
        let forwarded = mpig_value_i32(token);
        let sent = mpig_comm_send(comm, next, 0, forwarded);
        mpig_value_free(forwarded);
        if sent != MpigStatus::Ok {
            return ptr::null_mut();
        }
    }
    mpig_value_i32(token)
}

#[test]
fn ring_runs_through_the_c_abi() {
    unsafe {
        let mut results: *mut MpigResults = ptr::null_mut();
        ok!(mpig_run_local(
            Some(ring_body),
            ptr::null_mut(),
            16,
            &mut results
        ));
        let mut len = 0usize;
        ok!(mpig_results_len(results, &mut len));
        assert_eq!(len, 16);
        let mut root: *const MpigValue = ptr::null();
        ok!(mpig_results_get(results, 0, &mut root));
        let mut token = 0i32;
        ok!(mpig_value_get_i32(root, &mut token));
        assert_eq!(token, 15);
        let mut oob: *const MpigValue = ptr::null();
        assert_eq!(
            mpig_results_get(results, 16, &mut oob),
            MpigStatus::InvalidArgument
        );
        mpig_results_free(results);
    }
}

unsafe extern "C" fn subtract(
    a: *const MpigValue,
    b: *const MpigValue,
    _user: *mut c_void,
) -> *mut MpigValue {
    let mut x = 0i32;
    let mut y = 0i32;
    if mpig_value_get_i32(a, &mut x) != MpigStatus::Ok
        || mpig_value_get_i32(b, &mut y) != MpigStatus::Ok
    {
        return ptr::null_mut();
    }
    mpig_value_i32(x - y)
}

unsafe extern "C" fn split_reduce_body(comm: *mut MpigComm, _user: *mut c_void) -> *mut MpigValue {
    let mut rank = 0u32;
    if mpig_comm_rank(comm, &mut rank) != MpigStatus::Ok {
        return ptr::null_mut();
    }
    // Even ranks opt out; odd ranks form a group and subtract-reduce their
    // world ranks in key order.
    let color = if rank % 2 == 0 { -1 } else { 0 };
    let mut sub: *mut MpigComm = ptr::null_mut();
    if mpig_comm_split(comm, color, rank as i32, &mut sub) != MpigStatus::Ok {
        return ptr::null_mut();
    }
    if sub.is_null() {
        return mpig_value_i32(-1);
    }
    let mine = mpig_value_i32(rank as i32);
    let mut reduced: *mut MpigValue = ptr::null_mut();
    let status = mpig_comm_allreduce(sub, mine, Some(subtract), ptr::null_mut(), &mut reduced);
    mpig_value_free(mine);
    mpig_comm_free(sub);
    if status != MpigStatus::Ok {
        return ptr::null_mut();
    }
    reduced
}

#[test]
fn split_and_allreduce_through_the_c_abi() {
    unsafe {
        let mut results: *mut MpigResults = ptr::null_mut();
        ok!(mpig_run_local(
            Some(split_reduce_body),
            ptr::null_mut(),
            6,
            &mut results
        ));
        // odd ranks 1, 3, 5 fold to (1 - 3) - 5 = -7; even ranks opted out
        for rank in 0..6usize {
            let mut value: *const MpigValue = ptr::null();
            ok!(mpig_results_get(results, rank, &mut value));
            let mut out = 0i32;
            ok!(mpig_value_get_i32(value, &mut out));
            let expected = if rank % 2 == 0 { -1 } else { -7 };
            assert_eq!(out, expected, "rank {rank}");
        }
        mpig_results_free(results);
    }
}

static CALLBACK_SEEN: AtomicI32 = AtomicI32::new(i32::MIN);

unsafe extern "C" fn note_parity(status: MpigStatus, value: *mut MpigValue, user: *mut c_void) {
    if status == MpigStatus::Ok {
        let mut flag = false;
        if mpig_value_get_bool(value, &mut flag) == MpigStatus::Ok {
            let seen = user.cast::<AtomicI32>();
            (*seen).store(flag as i32, Ordering::SeqCst);
        }
        mpig_value_free(value);
    }
}

unsafe extern "C" fn ticket_body(comm: *mut MpigComm, _user: *mut c_void) -> *mut MpigValue {
    let mut rank = 0u32;
    let mut size = 0u32;
    if mpig_comm_rank(comm, &mut rank) != MpigStatus::Ok
        || mpig_comm_size(comm, &mut size) != MpigStatus::Ok
    {
        return ptr::null_mut();
    }
    let half = size / 2;
    if rank < half {
        let me = mpig_value_i32(rank as i32);
        let sent = mpig_comm_send(comm, rank + half, 0, me);
        mpig_value_free(me);
        if sent != MpigStatus::Ok {
            return ptr::null_mut();
        }
        let mut ticket: *mut MpigTicket = ptr::null_mut();
        if mpig_comm_receive_async(comm, rank + half, 0, MpigKind::Bool, &mut ticket)
            != MpigStatus::Ok
        {
            return ptr::null_mut();
        }
        if rank == 0 {
            // one rank also exercises the callback path
            if mpig_ticket_on_complete(
                ticket,
                Some(note_parity),
                (&CALLBACK_SEEN as *const AtomicI32 as *mut AtomicI32).cast(),
            ) != MpigStatus::Ok
            {
                mpig_ticket_free(ticket);
                return ptr::null_mut();
            }
        }
        let mut value: *mut MpigValue = ptr::null_mut();
        let status = mpig_ticket_await(ticket, &mut value);
        let mut complete = false;
        let _ = mpig_ticket_is_complete(ticket, &mut complete);
        mpig_ticket_free(ticket);
        if status != MpigStatus::Ok || !complete {
            return ptr::null_mut();
        }
        value
    } else {
        let mut received: *mut MpigValue = ptr::null_mut();
        if mpig_comm_receive(comm, rank - half, 0, MpigKind::I32, &mut received) != MpigStatus::Ok {
            return ptr::null_mut();
        }
        let mut peer = 0i32;
        let status = mpig_value_get_i32(received, &mut peer);
        mpig_value_free(received);
        if status != MpigStatus::Ok {
            return ptr::null_mut();
        }
        let parity = mpig_value_bool(peer % 2 == 0);
        let sent = mpig_comm_send(comm, rank - half, 0, parity);
        if sent != MpigStatus::Ok {
            mpig_value_free(parity);
            return ptr::null_mut();
        }
        parity
    }
}

#[test]
fn async_tickets_and_callbacks_through_the_c_abi() {
    unsafe {
        CALLBACK_SEEN.store(i32::MIN, Ordering::SeqCst);
        let mut results: *mut MpigResults = ptr::null_mut();
        ok!(mpig_run_local(
            Some(ticket_body),
            ptr::null_mut(),
            10,
            &mut results
        ));
        for rank in 0..5usize {
            let mut value: *const MpigValue = ptr::null();
            ok!(mpig_results_get(results, rank, &mut value));
            let mut parity = false;
            ok!(mpig_value_get_bool(value, &mut parity));
            assert_eq!(parity, rank % 2 == 0);
        }
        mpig_results_free(results);
        // rank 0 is even: the callback observed `true`
        assert_eq!(CALLBACK_SEEN.load(Ordering::SeqCst), 1);
    }
}

unsafe extern "C" fn failing_body(comm: *mut MpigComm, _user: *mut c_void) -> *mut MpigValue {
    let mut rank = 0u32;
    if mpig_comm_rank(comm, &mut rank) != MpigStatus::Ok {
        return ptr::null_mut();
    }
    if rank == 1 {
        // force a detectable error, then report failure by returning NULL
        let mut out: *mut MpigValue = ptr::null_mut();
        let status = mpig_comm_receive(comm, 99, 0, MpigKind::I32, &mut out);
        assert_eq!(status, MpigStatus::InvalidRank);
        return ptr::null_mut();
    }
    mpig_value_unit()
}

#[test]
fn failing_rank_reports_job_failed_with_message() {
    unsafe {
        let mut results: *mut MpigResults = ptr::null_mut();
        let status = mpig_run_local(Some(failing_body), ptr::null_mut(), 2, &mut results);
        assert_eq!(status, MpigStatus::JobFailed);
        let message = last_error();
        assert!(message.contains("rank 1"), "got: {message}");
        assert!(message.contains("invalid rank"), "got: {message}");
    }
}

static CLUSTER_RANKS_SEEN: AtomicU32 = AtomicU32::new(0);

unsafe extern "C" fn count_rank(comm: *mut MpigComm, _user: *mut c_void) -> *mut MpigValue {
    let mut rank = 0u32;
    if mpig_comm_rank(comm, &mut rank) != MpigStatus::Ok {
        return ptr::null_mut();
    }
    CLUSTER_RANKS_SEEN.fetch_add(1, Ordering::SeqCst);
    mpig_value_i32((rank * rank) as i32)
}

#[test]
fn loopback_cluster_through_the_c_abi() {
    unsafe {
        let registry = mpig_registry_new();
        let name = CString::new("squares").unwrap();
        ok!(mpig_registry_register(
            registry,
            name.as_ptr(),
            Some(count_rank),
            ptr::null_mut()
        ));

        let listen = CString::new("127.0.0.1:0").unwrap();
        let mut master: *mut MpigMaster = ptr::null_mut();
        ok!(mpig_master_bind(listen.as_ptr(), registry, &mut master));
        let mut addr_raw: *mut c_char = ptr::null_mut();
        ok!(mpig_master_addr(master, &mut addr_raw));
        let addr = CStr::from_ptr(addr_raw).to_str().unwrap().to_string();
        mpig_string_free(addr_raw);

        let registry_addr = registry as usize;
        let worker_threads: Vec<_> = (0..2)
            .map(|_| {
                let addr = addr.clone();
                std::thread::spawn(move || {
                    let master_addr = CString::new(addr).unwrap();
                    let listen = CString::new("127.0.0.1:0").unwrap();
                    mpig_worker_run(
                        master_addr.as_ptr(),
                        listen.as_ptr(),
                        registry_addr as *const MpigRegistry,
                    )
                })
            })
            .collect();

        ok!(mpig_master_wait_for_workers(master, 2, 30_000));
        let mut results: *mut MpigResults = ptr::null_mut();
        ok!(mpig_master_execute(
            master,
            name.as_ptr(),
            4,
            0,
            &mut results
        ));
        let mut len = 0usize;
        ok!(mpig_results_len(results, &mut len));
        assert_eq!(len, 4);
        for rank in 0..4usize {
            let mut value: *const MpigValue = ptr::null();
            ok!(mpig_results_get(results, rank, &mut value));
            let mut out = 0i32;
            ok!(mpig_value_get_i32(value, &mut out));
            assert_eq!(out, (rank * rank) as i32);
        }
        mpig_results_free(results);
        assert_eq!(CLUSTER_RANKS_SEEN.load(Ordering::SeqCst), 4);

        ok!(mpig_master_shutdown(master));
        for t in worker_threads {
            assert_eq!(t.join().unwrap(), MpigStatus::Ok);
        }
        mpig_registry_free(registry);
    }
}
