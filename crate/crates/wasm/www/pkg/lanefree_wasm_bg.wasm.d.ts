/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_ring_free: (a: number, b: number) => void;
export const plan_trajectory: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const potential_field: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number];
export const ring_advance: (a: number, b: number) => [number, number];
export const ring_new: (a: number, b: bigint) => [number, number, number];
export const ring_road_length: (a: number) => number;
export const ring_time: (a: number) => number;
export const ring_vehicles: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
